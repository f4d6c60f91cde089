#pragma once

// Internal declarations shared by the kernel variants and the dispatcher.
// The recurrence coefficient tables are computed once per call by both
// variants from the same code path, so any scalar/AVX2 output difference
// comes from arithmetic rounding alone.

#include <cstddef>

#include "bubbleflow/kernels.hpp"

namespace bubbleflow::kernels::detail {

constexpr int tri_index(int l, int m) { return l * (l + 1) / 2 + m; }
constexpr int tri_count(int degree) { return (degree + 1) * (degree + 2) / 2; }

// Recurrence coefficients of the Schmidt semi-normalized Legendre functions:
//   W_mm     = diag[m] * W_{m-1,m-1}                      (m >= 2; W_11 = 1)
//   W_{m+1,m}= sub[m] * u * W_mm
//   W_lm     = c1[l,m] * u * W_{l-1,m} - c2[l,m] * W_{l-2,m}
struct LmTables {
  double diag[kMaxDegree + 1];
  double sub[kMaxDegree + 1];
  double c1[tri_count(kMaxDegree)];
  double c2[tri_count(kMaxDegree)];
};

LmTables make_lm_tables(int degree);

void eval_expansion_scalar(const double* coeffs, int degree, const double center[3],
                           double scale, const double* px, const double* py,
                           const double* pz, std::size_t n,
                           double* phi, double* gx, double* gy, double* gz);
double dot_scalar(const double* w, const double* f, std::size_t n);
double dot3_scalar(const double* w, const double* ax, const double* ay, const double* az,
                   const double* bx, const double* by, const double* bz, std::size_t n);

void eval_expansion_avx2(const double* coeffs, int degree, const double center[3],
                         double scale, const double* px, const double* py,
                         const double* pz, std::size_t n,
                         double* phi, double* gx, double* gy, double* gz);
double dot_avx2(const double* w, const double* f, std::size_t n);
double dot3_avx2(const double* w, const double* ax, const double* ay, const double* az,
                 const double* bx, const double* by, const double* bz, std::size_t n);

void check_degree(int degree);

}  // namespace bubbleflow::kernels::detail
