#include <cmath>
#include <stdexcept>
#include <string>

#include "kernels_detail.hpp"

namespace bubbleflow::kernels::detail {

void check_degree(int degree) {
  if (degree < 0 || degree > kMaxDegree)
    throw std::invalid_argument("expansion degree " + std::to_string(degree) +
                                " outside supported range [0, " +
                                std::to_string(kMaxDegree) + "]");
}

LmTables make_lm_tables(int degree) {
  LmTables t{};
  for (int m = 0; m <= degree; ++m) {
    t.diag[m] = (m >= 2) ? std::sqrt((2.0 * m - 1.0) / (2.0 * m)) : 1.0;
    t.sub[m] = std::sqrt(2.0 * m + 1.0);
    for (int l = m + 2; l <= degree; ++l) {
      const double den = std::sqrt(static_cast<double>(l * l - m * m));
      t.c1[tri_index(l, m)] = (2.0 * l - 1.0) / den;
      t.c2[tri_index(l, m)] = std::sqrt(static_cast<double>((l - 1) * (l - 1) - m * m)) / den;
    }
  }
  return t;
}

void eval_expansion_scalar(const double* coeffs, int degree, const double center[3],
                           double scale, const double* px, const double* py,
                           const double* pz, std::size_t n,
                           double* phi, double* gx, double* gy, double* gz) {
  check_degree(degree);
  const LmTables t = make_lm_tables(degree);
  const int L = degree;
  const double inv_s = 1.0 / scale;

  double W[tri_count(kMaxDegree)], Wp[tri_count(kMaxDegree)];
  double C[kMaxDegree + 1], S[kMaxDegree + 1], RP[kMaxDegree + 1];

  for (std::size_t i = 0; i < n; ++i) {
    const double dx = (px[i] - center[0]) * inv_s;
    const double dy = (py[i] - center[1]) * inv_s;
    const double dz = (pz[i] - center[2]) * inv_s;
    const double rho = std::sqrt(dx * dx + dy * dy + dz * dz);
    const double ir = 1.0 / rho;
    const double a = dx * ir, b = dy * ir, u = dz * ir;

    // Azimuth polynomials: C_m + i S_m = (a + i b)^m.
    C[0] = 1.0;
    S[0] = 0.0;
    for (int m = 1; m <= L; ++m) {
      C[m] = a * C[m - 1] - b * S[m - 1];
      S[m] = a * S[m - 1] + b * C[m - 1];
    }
    // Radial powers rho^-(l+1).
    RP[0] = ir;
    for (int l = 1; l <= L; ++l) RP[l] = RP[l - 1] * ir;
    // Legendre block W (and u-derivative Wp) by recurrence.
    W[0] = 1.0;
    Wp[0] = 0.0;
    for (int m = 1; m <= L; ++m) {
      W[tri_index(m, m)] = t.diag[m] * W[tri_index(m - 1, m - 1)];
      Wp[tri_index(m, m)] = 0.0;
    }
    for (int m = 0; m < L; ++m) {
      W[tri_index(m + 1, m)] = t.sub[m] * u * W[tri_index(m, m)];
      Wp[tri_index(m + 1, m)] = t.sub[m] * W[tri_index(m, m)];
    }
    for (int m = 0; m <= L; ++m) {
      for (int l = m + 2; l <= L; ++l) {
        const double c1 = t.c1[tri_index(l, m)], c2 = t.c2[tri_index(l, m)];
        W[tri_index(l, m)] = c1 * u * W[tri_index(l - 1, m)] - c2 * W[tri_index(l - 2, m)];
        Wp[tri_index(l, m)] = c1 * (W[tri_index(l - 1, m)] + u * Wp[tri_index(l - 1, m)]) -
                              c2 * Wp[tri_index(l - 2, m)];
      }
    }

    // Scaled angular gradients: rho * grad of u, a, b.
    const double pu_x = -u * a, pu_y = -u * b, pu_z = 1.0 - u * u;
    const double pa_x = 1.0 - a * a, pa_y = -a * b, pa_z = -a * u;
    const double pb_x = -a * b, pb_y = 1.0 - b * b, pb_z = -b * u;

    double acc_p = 0.0, gdx = 0.0, gdy = 0.0, gdz = 0.0;
    for (int m = 0; m <= L; ++m) {
      for (int l = m; l <= L; ++l) {
        const double Wlm = W[tri_index(l, m)];
        const double Wplm = Wp[tri_index(l, m)];
        const double Ac = coeffs[coeff_index(l, m, false)];
        const double As = (m > 0) ? coeffs[coeff_index(l, m, true)] : 0.0;
        const double f = Ac * C[m] + As * S[m];
        acc_p += RP[l] * Wlm * f;

        const double com = RP[l] * ir;
        const double radial = -(l + 1.0) * Wlm * f;  // coefficient of (a,b,u)
        const double dudir = Wplm * f;               // coefficient of rho*grad(u)
        double vx = radial * a + dudir * pu_x;
        double vy = radial * b + dudir * pu_y;
        double vz = radial * u + dudir * pu_z;
        if (m > 0) {
          const double fa = m * (Ac * C[m - 1] + As * S[m - 1]);
          const double fb = m * (As * C[m - 1] - Ac * S[m - 1]);
          vx += Wlm * (fa * pa_x + fb * pb_x);
          vy += Wlm * (fa * pa_y + fb * pb_y);
          vz += Wlm * (fa * pa_z + fb * pb_z);
        }
        gdx += com * vx;
        gdy += com * vy;
        gdz += com * vz;
      }
    }

    if (phi != nullptr) phi[i] += acc_p;
    gx[i] += gdx * inv_s;
    gy[i] += gdy * inv_s;
    gz[i] += gdz * inv_s;
  }
}

double dot_scalar(const double* w, const double* f, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += w[i] * f[i];
  return acc;
}

double dot3_scalar(const double* w, const double* ax, const double* ay, const double* az,
                   const double* bx, const double* by, const double* bz, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += w[i] * (ax[i] * bx[i] + ay[i] * by[i] + az[i] * bz[i]);
  return acc;
}

}  // namespace bubbleflow::kernels::detail
