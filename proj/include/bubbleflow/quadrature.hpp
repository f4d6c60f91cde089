#pragma once

// Deterministic quadrature on spheres and on the fluid domain exterior to the
// bubbles, plus finite-difference differential operators used by the
// verification suites.

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "bubbleflow/geometry.hpp"

namespace bubbleflow {

// Tensor-product rule on the unit sphere: Gauss-Legendre in the cosine of the
// colatitude times a uniform grid in azimuth. Integrates every spherical
// polynomial of total degree <= exactness_degree exactly; weights sum to 4pi.
struct SphereRule {
  std::vector<Vec3> nodes;      // unit vectors, colatitude-major ordering
  std::vector<double> weights;  // positive, sum to 4pi
  int exactness_degree = 0;

  std::size_t size() const { return nodes.size(); }
};

// degree in [0, 512]; throws ConfigError listing the supported range otherwise.
SphereRule make_sphere_rule(int degree);

// How the unbounded radial direction is handled.
enum class FarFieldMode {
  analytic_tail,  // map [R,inf) -> (0,1] via w = R/rho; exact for fields
                  // decaying like rho^-4 .. rho^-7 (all products of basis
                  // gradients qualify)
  cutoff,         // integrate only up to cutoff_radius
};

struct ExteriorRuleParams {
  FarFieldMode mode = FarFieldMode::analytic_tail;
  int sphere_degree = 16;          // angular exactness of all spherical factors
  int radial_cells_per_shell = 12; // composite cells across each bubble shell
  int radial_cells_near = 32;      // cells on [0, R_near] of the remainder grid
  int radial_cells_tail = 16;      // cells on the mapped tail (analytic_tail)
  double shell_width_factor = 2.0; // shell thickness = factor * delta
  double cutoff_radius = 0.0;      // required > scene radius in cutoff mode
};

// Nodes/weights for integrals over the exterior domain. The domain is split
// into bubble-centered radial shells (which carry a polynomial partition
// factor, integrated exactly on breakpoint-aligned cells) and a remainder
// covered by an origin-centered grid; the remainder weights are normalized so
// that the total weight reproduces the analytically known measure of the
// discretized region exactly. Summation order is fixed (node index
// ascending), so values are bitwise reproducible.
struct ExteriorRule {
  std::vector<Vec3> nodes;
  std::vector<double> weights;   // partition factors folded in
  double total_weight = 0.0;     // sum of weights of the bounded part
  double bounded_measure = 0.0;  // analytic measure of the bounded part
  bool has_tail = false;         // true in analytic_tail mode
  std::size_t tail_begin = 0;    // nodes[tail_begin..] belong to the tail

  std::size_t size() const { return nodes.size(); }
};

ExteriorRule make_exterior_rule(const BubbleConfig& config,
                                const ExteriorRuleParams& params);

struct ExteriorIntegral {
  double value = 0.0;
  // Estimated magnitude of the neglected far field (cutoff mode only;
  // assumes the integrand decays like rho^-4 past the cutoff). Zero in
  // analytic_tail mode.
  double truncation_estimate = 0.0;
};

// Fixed-order weighted sum of field samples over the rule's nodes. Throws
// NumericalError naming the node location if a sample is not finite.
ExteriorIntegral exterior_integral(const std::function<double(const Vec3&)>& field,
                                   const BubbleConfig& config,
                                   const ExteriorRule& rule);

// Central finite differences, O(step^2).
Eigen::Matrix3d fd_jacobian(const std::function<Vec3(const Vec3&)>& field,
                            const Vec3& point, double step);
double fd_divergence(const std::function<Vec3(const Vec3&)>& field,
                     const Vec3& point, double step);

// Gauss-Legendre nodes/weights on [a, b] (ascending nodes).
void gauss_legendre(int n, double a, double b,
                    std::vector<double>& nodes, std::vector<double>& weights);

// C^3 polynomial step: 0 for s <= 0, 1 for s >= 1, septic blend between.
double smooth_step(double s);

}  // namespace bubbleflow
