#pragma once

// Moving-domain machinery. A piecewise-affine reference motion of the bubbles
// induces a smooth velocity field that rigidly follows each bubble (its
// translation plus dilation) inside a mollified cutoff and vanishes far away.
// The flow of that field deforms the initial fluid domain onto the current
// one; we propagate its Jacobian with the variational equation and provide
// the volume-weighted pushforward that transports divergence-free fields
// between the two domains.

#include <array>
#include <functional>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "bubbleflow/geometry.hpp"
#include "bubbleflow/ode.hpp"

namespace bubbleflow {

// Reference motion: centers and radii interpolate linearly between
// breakpoints. The per-bubble cutoff of bubble i reaches out to
// r_i(t) + 3*delta/4, so cutoffs stay pairwise disjoint with margin as long
// as every pairwise gap stays >= 4*delta; validate() enforces that along the
// whole horizon (the gap of two linearly moving balls can dip between
// breakpoints, so endpoints alone would not do).
struct AleField {
  std::vector<double> times;          // breakpoints; times[0] == 0, strictly increasing
  std::vector<BubbleConfig> configs;  // one per breakpoint; only centers/radii are used
  double delta = 0.0;                 // cutoff length scale, > 0

  int count() const { return configs.empty() ? 0 : configs.front().count(); }
  double horizon() const { return times.back(); }

  // Throws ConfigError listing the violation: shape mismatches, nonpositive
  // radii or delta, non-finite centers, unsorted times, or a pairwise gap
  // below 4*delta anywhere on the horizon.
  void validate() const;

  // Piecewise-linear state and slopes at t in [0, horizon]; the slopes are
  // those of the segment containing t (right-continuous at breakpoints).
  void sample(double t, std::vector<Vec3>& centers, std::vector<double>& radii,
              std::vector<Vec3>& center_rates, std::vector<double>& radius_rates) const;

  // Radius m0 with every cutoff contained in B(0, m0) for all t; the
  // transport field vanishes and the flow is the identity outside.
  double identity_radius() const;
};

// Straight-line motion from one configuration to another over unit time: the
// interpolation map between two nearby admissible configurations.
AleField interpolation_field(const BubbleConfig& from, const BubbleConfig& to, double delta);

// Smooth radial cutoff of bubble i at time t: 1 out to r_i(t) + delta/4,
// 0 from r_i(t) + 3*delta/4 on, and a monotone C^infinity ramp in between
// (the integral of a compactly supported bump, so every derivative scales
// like 1/delta^n).
double chi(const AleField& field, int i, double t, double s);

// Transport velocity at (t, x): sum over bubbles of
//   chi_i(t, |x - x_i|) * (xdot_i + (rdot_i / r_i) (x - x_i)).
// Equals bubble i's rigid-plus-dilation velocity on B(x_i, r_i + delta/4)
// and vanishes outside every cutoff.
Vec3 v_ale(const AleField& field, double t, const Vec3& x);

// Spatial gradient of the transport velocity, (grad)_jk = d v_j / d x_k.
Eigen::Matrix3d v_ale_gradient(const AleField& field, double t, const Vec3& x);

struct FlowResult {
  Vec3 position = Vec3::Zero();
  Eigen::Matrix3d jacobian = Eigen::Matrix3d::Identity();
  double det = 1.0;
  Eigen::Matrix3d cofactor = Eigen::Matrix3d::Identity();  // det * J^{-T}
};

// Flow generated by the transport field: position plus Jacobian propagated by
// the variational equation, integrated breakpoint to breakpoint (the field is
// only piecewise smooth in t). One dense solution per distinct starting point
// is cached, so repeated t-queries are cheap; the cache makes evaluation
// non-reentrant, use one FlowMap per thread.
class FlowMap {
 public:
  // Validates the field; tolerance is the ODE error per unit time.
  explicit FlowMap(AleField field, double tolerance = 1e-10);

  const AleField& field() const { return field_; }
  double horizon() const { return field_.horizon(); }
  double identity_radius() const { return m0_; }

  // Forward map with first derivatives, t in [0, horizon]. Checks det > 0
  // (NumericalError otherwise; cannot happen for a validated field).
  FlowResult flow(double t, const Vec3& x) const;
  Vec3 map(double t, const Vec3& x) const;  // position only

  // Inverse map: backward integration for the initial guess, then Newton on
  // the forward map with the propagated Jacobian. Throws NumericalError if
  // Newton fails to reach the flow's own accuracy (should not occur).
  Vec3 inverse(double t, const Vec3& x) const;

 private:
  using Solution = std::vector<OdeSolution>;  // one entry per breakpoint segment

  const Solution& solution(const Vec3& x) const;
  Solution integrate_from(const Vec3& x) const;
  FlowResult eval(const Solution& sol, double t) const;

  AleField field_;
  double tol_ = 1e-10;
  double m0_ = 0.0;
  mutable std::map<std::array<double, 3>, Solution> cache_;
};

using VectorField = std::function<Vec3(const Vec3&)>;

// Volume-weighted pushforward from the initial domain to the time-t one:
//   (push v)(x) = J(x0) v(x0) / det J(x0),  x0 = inverse image of x.
// Preserves zero divergence and tangency to the transported boundaries.
Vec3 pushforward(const FlowMap& flow, double t, const VectorField& v, const Vec3& x);

// Its inverse, carrying fields on the time-t domain back to the initial one:
//   (pull v)(x) = Cof(J(x))^T v(forward image of x).
Vec3 pullback(const FlowMap& flow, double t, const VectorField& v, const Vec3& x);

// Image at the material point x0 of the reference unit normal n0 under the
// flow: Cof(J) n0 normalized, the outward normal of a transported surface.
Vec3 transported_normal(const FlowMap& flow, double t, const Vec3& x0, const Vec3& n0);

}  // namespace bubbleflow
