// AVX2 variants of the batched kernels. This translation unit is the only one
// compiled with -mavx2 -mfma; it vectorizes across points (4 doubles per
// lane group) with the identical operation order as the scalar reference, and
// hands the remainder points to the scalar kernel.

#include <immintrin.h>

#include "kernels_detail.hpp"

namespace bubbleflow::kernels::detail {

namespace {

inline double hsum_fixed(__m256d v) {
  alignas(32) double lane[4];
  _mm256_store_pd(lane, v);
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

}  // namespace

void eval_expansion_avx2(const double* coeffs, int degree, const double center[3],
                         double scale, const double* px, const double* py,
                         const double* pz, std::size_t n,
                         double* phi, double* gx, double* gy, double* gz) {
  check_degree(degree);
  const LmTables t = make_lm_tables(degree);
  const int L = degree;
  const double inv_s_d = 1.0 / scale;
  const __m256d inv_s = _mm256_set1_pd(inv_s_d);
  const __m256d cx = _mm256_set1_pd(center[0]);
  const __m256d cy = _mm256_set1_pd(center[1]);
  const __m256d cz = _mm256_set1_pd(center[2]);
  const __m256d one = _mm256_set1_pd(1.0);

  __m256d W[tri_count(kMaxDegree)], Wp[tri_count(kMaxDegree)];
  __m256d C[kMaxDegree + 1], S[kMaxDegree + 1], RP[kMaxDegree + 1];

  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    const __m256d dx = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(px + i), cx), inv_s);
    const __m256d dy = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(py + i), cy), inv_s);
    const __m256d dz = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(pz + i), cz), inv_s);
    const __m256d rho2 =
        _mm256_fmadd_pd(dx, dx, _mm256_fmadd_pd(dy, dy, _mm256_mul_pd(dz, dz)));
    const __m256d ir = _mm256_div_pd(one, _mm256_sqrt_pd(rho2));
    const __m256d a = _mm256_mul_pd(dx, ir);
    const __m256d b = _mm256_mul_pd(dy, ir);
    const __m256d u = _mm256_mul_pd(dz, ir);

    C[0] = one;
    S[0] = _mm256_setzero_pd();
    for (int m = 1; m <= L; ++m) {
      C[m] = _mm256_fmsub_pd(a, C[m - 1], _mm256_mul_pd(b, S[m - 1]));
      S[m] = _mm256_fmadd_pd(a, S[m - 1], _mm256_mul_pd(b, C[m - 1]));
    }
    RP[0] = ir;
    for (int l = 1; l <= L; ++l) RP[l] = _mm256_mul_pd(RP[l - 1], ir);

    W[0] = one;
    Wp[0] = _mm256_setzero_pd();
    for (int m = 1; m <= L; ++m) {
      W[tri_index(m, m)] = _mm256_mul_pd(_mm256_set1_pd(t.diag[m]), W[tri_index(m - 1, m - 1)]);
      Wp[tri_index(m, m)] = _mm256_setzero_pd();
    }
    for (int m = 0; m < L; ++m) {
      const __m256d sub = _mm256_set1_pd(t.sub[m]);
      Wp[tri_index(m + 1, m)] = _mm256_mul_pd(sub, W[tri_index(m, m)]);
      W[tri_index(m + 1, m)] = _mm256_mul_pd(u, Wp[tri_index(m + 1, m)]);
    }
    for (int m = 0; m <= L; ++m) {
      for (int l = m + 2; l <= L; ++l) {
        const __m256d c1 = _mm256_set1_pd(t.c1[tri_index(l, m)]);
        const __m256d c2 = _mm256_set1_pd(t.c2[tri_index(l, m)]);
        W[tri_index(l, m)] =
            _mm256_sub_pd(_mm256_mul_pd(c1, _mm256_mul_pd(u, W[tri_index(l - 1, m)])),
                          _mm256_mul_pd(c2, W[tri_index(l - 2, m)]));
        Wp[tri_index(l, m)] = _mm256_sub_pd(
            _mm256_mul_pd(c1, _mm256_fmadd_pd(u, Wp[tri_index(l - 1, m)], W[tri_index(l - 1, m)])),
            _mm256_mul_pd(c2, Wp[tri_index(l - 2, m)]));
      }
    }

    const __m256d uu = _mm256_mul_pd(u, u);
    const __m256d pu_x = _mm256_sub_pd(_mm256_setzero_pd(), _mm256_mul_pd(u, a));
    const __m256d pu_y = _mm256_sub_pd(_mm256_setzero_pd(), _mm256_mul_pd(u, b));
    const __m256d pu_z = _mm256_sub_pd(one, uu);
    const __m256d pa_x = _mm256_sub_pd(one, _mm256_mul_pd(a, a));
    const __m256d pa_y = _mm256_sub_pd(_mm256_setzero_pd(), _mm256_mul_pd(a, b));
    const __m256d pa_z = _mm256_sub_pd(_mm256_setzero_pd(), _mm256_mul_pd(a, u));
    const __m256d pb_x = pa_y;
    const __m256d pb_y = _mm256_sub_pd(one, _mm256_mul_pd(b, b));
    const __m256d pb_z = _mm256_sub_pd(_mm256_setzero_pd(), _mm256_mul_pd(b, u));

    __m256d acc_p = _mm256_setzero_pd();
    __m256d gdx = _mm256_setzero_pd();
    __m256d gdy = _mm256_setzero_pd();
    __m256d gdz = _mm256_setzero_pd();
    for (int m = 0; m <= L; ++m) {
      for (int l = m; l <= L; ++l) {
        const __m256d Wlm = W[tri_index(l, m)];
        const __m256d Wplm = Wp[tri_index(l, m)];
        const __m256d Ac = _mm256_set1_pd(coeffs[coeff_index(l, m, false)]);
        const __m256d As =
            (m > 0) ? _mm256_set1_pd(coeffs[coeff_index(l, m, true)]) : _mm256_setzero_pd();
        const __m256d f = _mm256_fmadd_pd(Ac, C[m], _mm256_mul_pd(As, S[m]));
        acc_p = _mm256_fmadd_pd(_mm256_mul_pd(RP[l], Wlm), f, acc_p);

        const __m256d com = _mm256_mul_pd(RP[l], ir);
        const __m256d radial =
            _mm256_mul_pd(_mm256_set1_pd(-(l + 1.0)), _mm256_mul_pd(Wlm, f));
        const __m256d dudir = _mm256_mul_pd(Wplm, f);
        __m256d vx = _mm256_fmadd_pd(radial, a, _mm256_mul_pd(dudir, pu_x));
        __m256d vy = _mm256_fmadd_pd(radial, b, _mm256_mul_pd(dudir, pu_y));
        __m256d vz = _mm256_fmadd_pd(radial, u, _mm256_mul_pd(dudir, pu_z));
        if (m > 0) {
          const __m256d mm = _mm256_set1_pd(static_cast<double>(m));
          const __m256d fa =
              _mm256_mul_pd(mm, _mm256_fmadd_pd(Ac, C[m - 1], _mm256_mul_pd(As, S[m - 1])));
          const __m256d fb =
              _mm256_mul_pd(mm, _mm256_fmsub_pd(As, C[m - 1], _mm256_mul_pd(Ac, S[m - 1])));
          vx = _mm256_fmadd_pd(Wlm, _mm256_fmadd_pd(fa, pa_x, _mm256_mul_pd(fb, pb_x)), vx);
          vy = _mm256_fmadd_pd(Wlm, _mm256_fmadd_pd(fa, pa_y, _mm256_mul_pd(fb, pb_y)), vy);
          vz = _mm256_fmadd_pd(Wlm, _mm256_fmadd_pd(fa, pa_z, _mm256_mul_pd(fb, pb_z)), vz);
        }
        gdx = _mm256_fmadd_pd(com, vx, gdx);
        gdy = _mm256_fmadd_pd(com, vy, gdy);
        gdz = _mm256_fmadd_pd(com, vz, gdz);
      }
    }

    if (phi != nullptr)
      _mm256_storeu_pd(phi + i, _mm256_add_pd(_mm256_loadu_pd(phi + i), acc_p));
    _mm256_storeu_pd(gx + i, _mm256_fmadd_pd(gdx, inv_s, _mm256_loadu_pd(gx + i)));
    _mm256_storeu_pd(gy + i, _mm256_fmadd_pd(gdy, inv_s, _mm256_loadu_pd(gy + i)));
    _mm256_storeu_pd(gz + i, _mm256_fmadd_pd(gdz, inv_s, _mm256_loadu_pd(gz + i)));
  }

  if (n4 < n)
    eval_expansion_scalar(coeffs, degree, center, scale, px + n4, py + n4, pz + n4,
                          n - n4, phi == nullptr ? nullptr : phi + n4,
                          gx + n4, gy + n4, gz + n4);
}

double dot_avx2(const double* w, const double* f, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(f + i), acc);
  double out = hsum_fixed(acc);
  for (std::size_t i = n4; i < n; ++i) out += w[i] * f[i];
  return out;
}

double dot3_avx2(const double* w, const double* ax, const double* ay, const double* az,
                 const double* bx, const double* by, const double* bz, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < n4; i += 4) {
    __m256d s = _mm256_mul_pd(_mm256_loadu_pd(ax + i), _mm256_loadu_pd(bx + i));
    s = _mm256_fmadd_pd(_mm256_loadu_pd(ay + i), _mm256_loadu_pd(by + i), s);
    s = _mm256_fmadd_pd(_mm256_loadu_pd(az + i), _mm256_loadu_pd(bz + i), s);
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(w + i), s, acc);
  }
  double out = hsum_fixed(acc);
  for (std::size_t i = n4; i < n; ++i)
    out += w[i] * (ax[i] * bx[i] + ay[i] * by[i] + az[i] * bz[i]);
  return out;
}

}  // namespace bubbleflow::kernels::detail
