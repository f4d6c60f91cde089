#pragma once

// Hot inner loops shared by the harmonic-basis and quadrature layers:
//  * batched evaluation of one truncated exterior solid-harmonic expansion
//    (potential value + Cartesian gradient) over an array of points,
//  * weighted dot-product reductions over node arrays.
//
// Each kernel has a scalar reference implementation and an AVX2 variant; the
// active variant is chosen once at runtime (cpuid), can be pinned with the
// environment variable BUBBLEFLOW_KERNELS=scalar|avx2, and the two are
// equivalence-tested against each other. Summation order is fixed within each
// variant, so results are bitwise reproducible for a fixed machine and build.

#include <cstddef>

namespace bubbleflow::kernels {

// Highest supported expansion degree (inclusive).
inline constexpr int kMaxDegree = 16;

// Real solid-harmonic expansion around `center` with length scale `scale`:
//   q(x) = sum_{l=0..L} sum_m  coeffs[idx(l,m)] * Y_lm((x - center)/scale)
// where Y_l0 = rho^-(l+1) W_l0(u), Y_lm^cos = rho^-(l+1) W_lm(u) C_m,
// Y_lm^sin = rho^-(l+1) W_lm(u) S_m. W_lm are Schmidt semi-normalized
// associated Legendre functions with the sin^m(theta) factor absorbed into
// the Cartesian azimuth polynomials (C_m + i S_m = ((dx + i dy)/rho)^m), so
// evaluation is smooth everywhere away from the center (no pole branches).
// Every Y_lm has squared surface mean 1/(2l+1) on the unit sphere.
//
// Packing: idx(l, 0) = l^2; idx(l, m>0) = l^2 + 2m - 1 for the cos term and
// l^2 + 2m for the sin term. Total length (L+1)^2.
inline constexpr int coeff_count(int degree) { return (degree + 1) * (degree + 1); }
inline constexpr int coeff_index(int l, int m, bool sin_term) {
  return l * l + (m == 0 ? 0 : 2 * m - (sin_term ? 0 : 1));
}

// Evaluates value and gradient of the expansion at n points given in SoA
// layout. Outputs are ACCUMULATED into phi/gx/gy/gz (callers zero them first
// and sum several expansions in place). phi may be nullptr when only the
// gradient is needed. The gradient is with respect to x (chain rule through
// `scale` included).
void eval_expansion(const double* coeffs, int degree, const double center[3],
                    double scale, const double* px, const double* py,
                    const double* pz, std::size_t n,
                    double* phi, double* gx, double* gy, double* gz);

// sum_k w[k] * f[k], fixed order.
double dot(const double* w, const double* f, std::size_t n);

// sum_k w[k] * (a[k] . b[k]) for SoA vector fields, fixed order.
double dot3(const double* w, const double* ax, const double* ay, const double* az,
            const double* bx, const double* by, const double* bz, std::size_t n);

// Name of the active variant: "scalar" or "avx2".
const char* backend();

// True when the AVX2 variant was compiled in and the CPU supports it.
bool avx2_available();

// Pins the active variant (used by the equivalence tests and the CLI).
// Throws std::runtime_error if the requested variant is unavailable.
void force_backend(const char* name);

}  // namespace bubbleflow::kernels
