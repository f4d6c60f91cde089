#pragma once

// Viscous N-bubble dynamics on a reduced moving Galerkin basis.
//
// The velocity space is spanned by the 4N potential-gradient fields of the
// current configuration (optionally restricted to the N monopole fields, or
// extended by user-supplied divergence-free modes tangent to every sphere).
// Bubble motion over one window [t_k, t_k + h] is prescribed affinely; the
// fluid unknowns on that window satisfy the weak momentum balance
//
//   d/dt (G U) = -2 nu D U  +  pressure forcing  +  interface mismatch
//                +  basis-motion coupling  +  convection,
//
// where G is the Gram matrix of the moving basis and U the velocity
// coefficients. Alongside the momentum we integrate the interface
// accumulators
//
//   r_i[u](t) = r_i(start) + int avg_{dB_i} u.n,
//   x_i[u](t) = x_i(start) + 3 int avg_{dB_i} (u.n) n,
//
// which feed the gas forcing c_i r_i[u]^(2-3gamma); the next window
// prescribes its bubble motion as the previous window's average accumulator
// rates, so the prescribed path chases the accumulated one with one-window
// lag (first order in h). Every run keeps an energy ledger (kinetic +
// potential + cumulative dissipation against the initial energy); a window
// whose slack drops below tolerance is redone with the internal step halved.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "bubbleflow/energy.hpp"
#include "bubbleflow/geometry.hpp"
#include "bubbleflow/harmonic.hpp"
#include "bubbleflow/quadrature.hpp"

namespace bubbleflow {

// Extra analytic velocity field for the reduced basis. Requirements (not
// checkable cheaply, so trusted): divergence-free, tangent to every bubble
// surface of the configurations it is used with, decaying like |x|^-2 or
// faster with gradient |x|^-3 or faster, and time-independent. `jacobian`
// returns J with J(i,j) = d field_i / d x_j.
struct SolenoidalMode {
  std::function<Vec3(const Vec3&)> field;
  std::function<Eigen::Matrix3d(const Vec3&)> jacobian;
};

struct ReducedBasisParams {
  bool monopole_only = false;     // keep only the N radial fields
  ReflectionParams reflections;   // potential solve controls
  ExteriorRuleParams exterior;    // volume quadrature for dissipation etc.
  int gram_degree = 0;            // boundary-reduction degree; 0 -> default
  double hessian_step = 0.0;      // FD step for velocity gradients; 0 -> 1e-5 * min radius
  // Gradient/solenoidal Gram coupling above this aborts the build (the modes
  // were promised tangent; a large coupling means they are not).
  double orthogonality_tolerance = 1e-6;
};

// Velocity basis at one configuration: the potential-gradient block (solved
// by reflections) plus any solenoidal modes, with the Gram and dissipation
// forms assembled once.
struct ReducedBasis {
  BubbleConfig config;
  HarmonicBasis gradients;            // full 4N solve (tables use the active prefix)
  int active_gradients = 0;           // N (monopole-only) or 4N
  std::vector<SolenoidalMode> modes;
  double nu = 0.0;
  Eigen::MatrixXd gram;               // (active+modes)^2, SPD
  Eigen::MatrixXd dissipation;        // entries 2 nu int D(b_a):D(b_b)
  ReducedBasisParams params;          // as built (quadrature reproducibility)

  int size() const { return active_gradients + static_cast<int>(modes.size()); }
};

// Solves the potential problems, assembles Gram and dissipation, verifies the
// gradient/mode orthogonality and positive definiteness. Throws ConfigError
// on an invalid configuration or non-tangent modes, NumericalError on solver
// or conditioning failure.
ReducedBasis build_reduced_basis(const BubbleConfig& config, double nu,
                                 const std::vector<SolenoidalMode>& modes,
                                 const ReducedBasisParams& params);

// The viscous form 2 nu int_Omega D(b_a):D(b_b) dx over the exterior domain
// of `config` (which must match the basis geometry), by exterior quadrature.
Eigen::MatrixXd dissipation_matrix(const ReducedBasis& basis, const BubbleConfig& config,
                                   double nu);

struct SchemeParams {
  double h = 1e-2;   // window length
  double T = 1.0;    // final time; T/h must be a positive integer
  double nu = 0.0;   // kinematic viscosity

  bool convection = true;  // false = Stokes mode (drops int u.(u.grad)psi)

  ReducedBasisParams basis;            // solve + volume quadrature controls
  std::vector<SolenoidalMode> modes;   // extra fields, appended after gradients
  int surface_degree = 16;             // sphere rule for boundary terms

  // Time step for the finite-difference basis-motion coupling int b_a . d/dt b_c
  // (re-solves at t +/- step with frozen sweep counts); 0 -> 1e-5.
  double time_fd_step = 0.0;

  // Implicit midpoint controls. The stage equation is solved by fixed-point
  // iteration to `midpoint_tolerance` (relative); a window whose energy slack
  // drops below -energy_tolerance * max(E0, 1) is redone with twice the
  // substeps, up to max_halvings.
  double midpoint_tolerance = 1e-13;
  int max_midpoint_iterations = 64;
  double energy_tolerance = 1e-7;
  int max_halvings = 8;
  int min_substeps = 1;

  double collision_threshold = 0.0;  // <= 0 -> 1e-3 * min initial radius
  bool enforce_horizon = true;       // stop at the separation horizon
  std::size_t max_windows = 1000000;

  void validate() const;  // ConfigError listing every violation
};

// One window of the scheme: affine prescribed bubble motion, initial velocity
// coefficients, and the accumulator state entering the window.
struct WindowProblem {
  double t_start = 0.0;
  double h = 0.0;
  BubbleConfig base;                 // prescribed state at t_start (+ gas law)
  std::vector<double> radius_rates;  // prescribed dR/dt, constant on the window
  std::vector<Vec3> center_rates;    // prescribed dX/dt

  Eigen::VectorXd initial_coefficients;            // U(t_start)
  std::vector<double> initial_accumulated_radii;   // r_i[u](t_start)
  std::vector<Vec3> initial_accumulated_centers;   // x_i[u](t_start)

  // Energy budget the slack is measured against; NaN derives it from the
  // window's own initial state (kinetic + potential + dissipated_before).
  double energy_reference = std::numeric_limits<double>::quiet_NaN();
  double dissipated_before = 0.0;

  // Reference separation width: the prescribed path must keep every pairwise
  // gap >= 2 * margin_delta throughout the window (and radii positive and
  // above half their window-start value). 0 -> the base configuration's
  // delta. For N = 1 only the radius conditions apply.
  double margin_delta = 0.0;

  // Prescribed configuration at time t (affine; valid slightly beyond the
  // window for finite differencing).
  BubbleConfig at(double t) const;

  // Geometry/shape checks; does not require pressure constants positive
  // (c_i = 0 is useful as the forcing-free diagnostic limit).
  // ConfigError listing every violation, including mid-window gap loss.
  void validate() const;
};

// Instantaneous state within a window.
struct WindowState {
  double time = 0.0;
  Eigen::VectorXd coefficients;              // U
  std::vector<double> accumulated_radii;     // r_i[u]
  std::vector<Vec3> accumulated_centers;     // x_i[u]
};

// Instantaneous derivative returned by window_rhs. momentum_rate is
// d/dt (G U); the accumulator rates are the surface averages of the current
// velocity field; dissipation_rate is 2 nu int |D(u)|^2.
struct WindowDerivative {
  Eigen::VectorXd momentum_rate;
  std::vector<double> radius_rates;
  std::vector<Vec3> center_rates;
  double dissipation_rate = 0.0;
};

// Assembles the weak momentum balance at state.time. `basis` must be built
// at the problem's prescribed configuration at that time (checked). The
// basis-motion coupling is differenced along the problem's affine path.
WindowDerivative window_rhs(const WindowProblem& problem, const WindowState& state,
                            const ReducedBasis& basis, const SchemeParams& params);

// One window integrated by implicit midpoint.
struct WindowResult {
  std::vector<WindowState> states;    // substep boundaries, t_start first
  std::vector<EnergySample> ledger;   // one row per substep end
  double dissipated = 0.0;            // increment over the window
  int substeps = 0;                   // accepted count (after halving)
  int halvings = 0;
  std::size_t rhs_evaluations = 0;
};

WindowResult solve_window(const WindowProblem& problem, const SchemeParams& params);

enum class SchemeStop {
  completed,      // reached T
  collision,      // prescribed gap hit the collision threshold
  horizon,        // separation horizon reached (enforce_horizon)
  admissibility,  // prescribed path lost the separation margin mid-run
};

struct ViscousSample {
  double time = 0.0;
  std::vector<double> prescribed_radii;
  std::vector<Vec3> prescribed_centers;
  std::vector<double> accumulated_radii;
  std::vector<Vec3> accumulated_centers;
  Eigen::VectorXd coefficients;  // U at the window boundary
};

struct ViscousTrajectory {
  std::vector<ViscousSample> samples;  // window boundaries, t = 0 first
  EnergyLedger ledger;                 // substep granularity
  SchemeStop stop = SchemeStop::completed;
  double stop_time = 0.0;
  double horizon = std::numeric_limits<double>::infinity();  // as computed at t = 0
  double energy_reference = 0.0;                             // E0
  std::size_t windows = 0;
  std::size_t halvings = 0;
  std::size_t rhs_evaluations = 0;
};

// Runs the windowed scheme from a validated configuration and initial
// velocity coefficients (length 4N, or N with monopole-only, plus one per
// mode). Window 0 holds the bubbles fixed; window k prescribes the previous
// window's average accumulator rates. Stops at T, at the collision
// threshold, at the separation horizon (unless disabled), or when the
// prescribed path loses admissibility (truncated, reported in `stop`).
ViscousTrajectory run_scheme(const Eigen::VectorXd& initial_coefficients,
                             const BubbleConfig& config, const SchemeParams& params);

// Largest T0 such that, under the a-priori interface-velocity bounds at
// energy E0 and width delta0, every radius stays within [inf r0 / 2,
// 2 sup r0] and (for N >= 2) the separation width cannot drop below
// delta0 / 2: T0 = min(sup r0 / C_R, inf r0 / (2 C_R),
// delta0 / (4 (C_R + C_X))). Infinite when E0 = 0.
double separation_horizon(double E0, double delta0, const BubbleConfig& config);

}  // namespace bubbleflow
