#pragma once

// Direct ODE reference for a single radial bubble:
//   r rddot + (3/2) rdot^2 + 4 nu rdot / r = p(r) - p_inf,
// with the gas law p = c/(4pi) r^-3gamma. The far pressure p_inf and the
// viscosity nu generalize the interior model slightly (the N-bubble system
// uses p_inf = 0); this module exists as an independently checkable oracle
// for the radial subclass of solutions.

#include <vector>

#include "bubbleflow/geometry.hpp"

namespace bubbleflow {

struct RPParams {
  double c = 4.0 * M_PI;   // relaxed pressure constant (p = c/(4pi) r^-3gamma)
  double gamma = 5.0 / 3.0;
  double nu = 0.0;         // kinematic viscosity
  double p_inf = 0.0;      // far-field pressure

  // gamma > 1, nu >= 0, p_inf >= 0, c >= 0 (c = 0 is the empty-cavity
  // limit, allowed here although bubble configs reject it).
  void validate() const;
};

struct RPState {
  double r = 1.0;
  double rdot = 0.0;
};

struct RPDerivative {
  double rdot = 0.0;
  double rddot = 0.0;
};

// Throws NumericalError when r <= 0 (collapsed).
RPDerivative rp_rhs(const RPState& state, const RPParams& params);

// First integral for nu = 0: 2 pi rdot^2 r^3 + c/(3gamma-3) r^(3-3gamma)
// + (4pi/3) p_inf r^3 (conserved along inviscid solutions).
double rp_energy(const RPState& state, const RPParams& params);

struct RPTrajectory {
  std::vector<double> times;
  std::vector<RPState> states;
  bool collapsed = false;
  double collapse_time = 0.0;  // meaningful when collapsed
};

// Radius below which the bubble counts as collapsed.
inline constexpr double kCollapseFloor = 1e-9;

// Adaptive 5(4) integration with dense output at the requested sample times
// (all within [0, t_end]). Local error is controlled per unit time, so the
// end-state error is proportional to tol. If the radius reaches the collapse
// floor the trajectory is truncated there and flagged; sample times past the
// collapse are dropped.
RPTrajectory rp_integrate(const RPState& init, const RPParams& params, double t_end, double tol,
                          const std::vector<double>& sample_times);

// Convenience: n_samples uniformly spaced samples including both endpoints.
RPTrajectory rp_integrate(const RPState& init, const RPParams& params, double t_end, double tol,
                          int n_samples = 201);

}  // namespace bubbleflow
