// Runtime selection between the scalar reference kernels and the AVX2
// variants. The choice is made once (cpuid plus the BUBBLEFLOW_KERNELS
// environment override) and can be re-pinned by tests via force_backend().

#include "bubbleflow/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "kernels_detail.hpp"

namespace bubbleflow::kernels {

namespace {

struct Vtable {
  decltype(&detail::eval_expansion_scalar) eval;
  decltype(&detail::dot_scalar) dot;
  decltype(&detail::dot3_scalar) dot3;
  const char* name;
};

const Vtable kScalar{detail::eval_expansion_scalar, detail::dot_scalar,
                     detail::dot3_scalar, "scalar"};
#ifdef BUBBLEFLOW_BUILD_AVX2
const Vtable kAvx2{detail::eval_expansion_avx2, detail::dot_avx2,
                   detail::dot3_avx2, "avx2"};
#endif

bool cpu_has_avx2() {
#ifdef BUBBLEFLOW_BUILD_AVX2
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Vtable* pick_default() {
  const char* env = std::getenv("BUBBLEFLOW_KERNELS");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return &kScalar;
#ifdef BUBBLEFLOW_BUILD_AVX2
  if (env != nullptr && std::strcmp(env, "avx2") == 0) {
    if (!cpu_has_avx2())
      throw std::runtime_error("BUBBLEFLOW_KERNELS=avx2 requested but CPU lacks AVX2/FMA");
    return &kAvx2;
  }
  if (cpu_has_avx2()) return &kAvx2;
#else
  if (env != nullptr && std::strcmp(env, "avx2") == 0)
    throw std::runtime_error("BUBBLEFLOW_KERNELS=avx2 requested but AVX2 support not compiled in");
#endif
  return &kScalar;
}

const Vtable*& active() {
  static const Vtable* vt = pick_default();
  return vt;
}

}  // namespace

void eval_expansion(const double* coeffs, int degree, const double center[3],
                    double scale, const double* px, const double* py,
                    const double* pz, std::size_t n,
                    double* phi, double* gx, double* gy, double* gz) {
  active()->eval(coeffs, degree, center, scale, px, py, pz, n, phi, gx, gy, gz);
}

double dot(const double* w, const double* f, std::size_t n) {
  return active()->dot(w, f, n);
}

double dot3(const double* w, const double* ax, const double* ay, const double* az,
            const double* bx, const double* by, const double* bz, std::size_t n) {
  return active()->dot3(w, ax, ay, az, bx, by, bz, n);
}

const char* backend() { return active()->name; }

bool avx2_available() { return cpu_has_avx2(); }

void force_backend(const char* name) {
  if (std::strcmp(name, "scalar") == 0) {
    active() = &kScalar;
    return;
  }
#ifdef BUBBLEFLOW_BUILD_AVX2
  if (std::strcmp(name, "avx2") == 0) {
    if (!cpu_has_avx2())
      throw std::runtime_error("force_backend: CPU lacks AVX2/FMA");
    active() = &kAvx2;
    return;
  }
#endif
  throw std::runtime_error(std::string("force_backend: unknown or unavailable variant '") +
                           name + "'");
}

}  // namespace bubbleflow::kernels
