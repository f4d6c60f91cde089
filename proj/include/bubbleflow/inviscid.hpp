#pragma once

// Lagrangian bubble dynamics without viscosity.  The fluid kinetic energy is
// the Gram form of the dilation basis evaluated at the generalized velocity
// (radius rates, center velocities), the potential energy is the adiabatic
// gas energy, and the motion follows the Euler-Lagrange equations of
// L = E_k - E_p in the 4N coordinates q = (r_1..r_N, x_1..x_N componentwise).

#include <Eigen/Core>

#include <limits>
#include <vector>

#include "bubbleflow/energy.hpp"
#include "bubbleflow/geometry.hpp"

namespace bubbleflow {

// Instantaneous mechanical state: a configuration plus its generalized
// velocity, ordered like the dilation basis (rdot_1..rdot_N, then center
// velocities componentwise).
struct PhaseState {
  BubbleConfig config;
  Eigen::VectorXd qdot;

  // ConfigError when the configuration is invalid, qdot has the wrong
  // length, or any rate is non-finite.
  void validate() const;
};

// Kinetic-energy quadratic form at this configuration: the Gram matrix M of
// the dilation basis solved at (degree, tolerance), so that
// E_k = 1/2 qdot^T M qdot.
Eigen::MatrixXd mass_matrix(const BubbleConfig& config, int degree, double tolerance);

// Generalized accelerations from the Euler-Lagrange equations:
//   M qddot = -(sum_k dM/dq_k qdot_k) qdot + 1/2 grad_q(qdot^T M qdot) - grad_q E_p
// where dM/dq is taken by central finite differences of the mass matrix
// (step fd_step; pass 0 for the default 1e-5 * mean radius).  Throws
// NumericalError when the mass matrix is numerically degenerate.
Eigen::VectorXd lagrange_rhs(const PhaseState& state, int degree, double tolerance,
                             double fd_step = 0.0);

struct InviscidParams {
  int degree = 8;                    // reflection truncation of the basis
  double basis_tolerance = 1e-7;     // reflection residual target
  double fd_step = 0.0;              // 0 -> 1e-5 * mean initial radius
  double tolerance = 1e-8;           // time-integration error per unit time
  double collision_threshold = 0.0;  // stop when the pairwise gap reaches
                                     // this; <= 0 picks 1e-3 * min radius
  std::size_t max_steps = 2000000;
};

struct InviscidTrajectory {
  std::vector<double> times;
  std::vector<PhaseState> states;
  // One row per accepted integrator step (dissipation column is zero).
  EnergyLedger ledger;
  bool collision = false;
  double collision_time = std::numeric_limits<double>::quiet_NaN();
  // Integrator effort, for diagnostics.
  std::size_t steps_accepted = 0;
  std::size_t steps_rejected = 0;
  std::size_t rhs_evaluations = 0;
};

// Integrate the Euler-Lagrange equations from `init` up to t_end, sampling
// the trajectory at `sample_times` (each in [0, t_end]).  Integration stops
// early when the smallest pairwise gap drops to the collision threshold;
// requested samples past that point are dropped and the collision state is
// appended as the final sample.
InviscidTrajectory integrate_inviscid(const PhaseState& init, double t_end,
                                      const InviscidParams& params,
                                      const std::vector<double>& sample_times);

// Same, sampling n_samples uniformly spaced times in [0, t_end].
InviscidTrajectory integrate_inviscid(const PhaseState& init, double t_end,
                                      const InviscidParams& params = {}, int n_samples = 101);

}  // namespace bubbleflow
