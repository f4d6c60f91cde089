#include "bubbleflow/inviscid.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "bubbleflow/harmonic.hpp"
#include "bubbleflow/ode.hpp"

namespace bubbleflow {

namespace {

// Smallest pairwise gap |x_i - x_j| - r_i - r_j; +inf for a single bubble.
double min_gap(const BubbleConfig& config) {
  const int n = config.count();
  double gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      gap = std::min(gap, (config.centers[i] - config.centers[j]).norm() - config.radii[i] -
                              config.radii[j]);
  return gap;
}

// Mass matrices are requested many times per step at nearly identical
// configurations (FSAL stage reuse, the energy ledger, rejected retries), so
// cache them keyed by coordinates quantized well below the finite-difference
// step.
//
// The mass matrix must be a *pure, smooth* function of the configuration:
// the step controller interprets any state-dependent solver noise as local
// truncation error, and the 1/(2*fd_step) in the shape derivative amplifies
// it by ~1e5.  Hence two solve modes:
//   - base configurations: cold adaptive iteration to the tolerance, a
//     deterministic function of the configuration alone;
//   - finite-difference stencils: a *fixed* number of sweeps seeded from the
//     current base basis, so the truncation error varies smoothly with the
//     perturbation and cancels between the +h and -h solves.
struct MassSolver {
  int degree;
  double tolerance;
  double quantum;       // key granularity; ~1e-4 of the fd step
  int fd_sweeps = 3;    // fixed refinement for stencil solves
  int base_sweeps = 0;  // frozen after the first adaptive solve

  HarmonicBasis seed = {};  // base basis of the current derivative stencil
  bool has_seed = false;
  std::map<std::vector<long long>, Eigen::MatrixXd> cache = {};

  std::vector<long long> key(const BubbleConfig& config) const {
    std::vector<long long> k;
    k.reserve(4 * config.count());
    for (double r : config.radii) k.push_back(std::llround(r / quantum));
    for (const Vec3& c : config.centers)
      for (int a = 0; a < 3; ++a) k.push_back(std::llround(c(a) / quantum));
    return k;
  }

  // By value: a cache trim must not invalidate results already handed out.
  Eigen::MatrixXd mass(const BubbleConfig& config, bool base) {
    const std::vector<long long> k = key(config);
    const auto it = cache.find(k);
    if (it != cache.end()) return it->second;
    ReflectionParams params;
    params.degree = degree;
    params.tolerance = tolerance;
    HarmonicBasis basis;
    if (base && base_sweeps == 0) {
      // First base solve: adaptive, which both verifies that (degree,
      // tolerance) is reachable for this geometry and fixes the sweep count
      // for all later solves (corrections applied = history rows - 1).
      basis = solve_reflections(config, params);
      base_sweeps = static_cast<int>(basis.sweep_history.size()) + 1;
    } else if (base) {
      // Fixed sweep count, cold start: a smooth deterministic function of
      // the configuration.  Escalate (sticky) if the geometry has tightened
      // so much that the frozen count no longer reaches the tolerance.
      params.fixed_sweeps = base_sweeps;
      basis = solve_reflections(config, params);
      double residual = *std::max_element(basis.residuals.begin(), basis.residuals.end());
      if (!std::isfinite(residual))
        throw NumericalError("reflection iteration diverged (bubbles nearly touching?)");
      while (residual > tolerance) {
        if (base_sweeps >= params.max_sweeps)
          throw NumericalError("reflection sweeps exhausted while tracking the trajectory");
        ReflectionParams extra = params;
        extra.fixed_sweeps = 1;
        basis = solve_reflections(config, extra, &basis);
        ++base_sweeps;
        const double next = *std::max_element(basis.residuals.begin(), basis.residuals.end());
        if (!std::isfinite(next))
          throw NumericalError("reflection iteration diverged (bubbles nearly touching?)");
        if (next >= residual)
          throw NumericalError(
              "basis truncation floor rose above the tolerance as the bubbles moved - "
              "increase the expansion degree or relax the basis tolerance");
        residual = next;
      }
    } else {
      params.fixed_sweeps = fd_sweeps;
      basis = solve_reflections(config, params, has_seed ? &seed : nullptr);
    }
    Eigen::MatrixXd g = gram(basis);
    if (!g.allFinite())
      throw NumericalError("reflection iteration diverged (bubbles nearly touching?)");
    if (base) {
      seed = std::move(basis);
      has_seed = true;
    }
    if (cache.size() > 20000) cache.clear();
    return cache.emplace(k, std::move(g)).first->second;
  }
};

// q ordering: (r_1..r_N, x_1..x_N componentwise), matching the basis.
BubbleConfig perturbed(const BubbleConfig& config, int coord, double step) {
  BubbleConfig out = config;
  const int n = config.count();
  if (coord < n)
    out.radii[coord] += step;
  else
    out.centers[(coord - n) / 3]((coord - n) % 3) += step;
  return out;
}

Eigen::VectorXd potential_gradient(const BubbleConfig& config) {
  const int n = config.count();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(4 * n);
  // E_p depends on radii only; dE_p/dr_i = -c_i r^(2-3gamma), i.e. the gas
  // pushes the radius outward.
  for (int i = 0; i < n; ++i)
    grad(i) = -config.pressure_constants[i] * std::pow(config.radii[i], 2.0 - 3.0 * config.gamma);
  return grad;
}

double default_fd_step(const BubbleConfig& config) {
  double mean = 0.0;
  for (double r : config.radii) mean += r;
  return 1e-5 * mean / config.count();
}

Eigen::VectorXd lagrange_rhs_impl(const PhaseState& state, MassSolver& solver, double fd_step) {
  const BubbleConfig& config = state.config;
  const int nq = 4 * config.count();
  const Eigen::VectorXd& qdot = state.qdot;

  const Eigen::MatrixXd m = solver.mass(config, true);

  Eigen::VectorXd force = -potential_gradient(config);
  Eigen::MatrixXd mdot = Eigen::MatrixXd::Zero(nq, nq);
  for (int k = 0; k < nq; ++k) {
    const Eigen::MatrixXd deriv = (solver.mass(perturbed(config, k, fd_step), false) -
                                   solver.mass(perturbed(config, k, -fd_step), false)) /
                                  (2.0 * fd_step);
    mdot += qdot(k) * deriv;
    force(k) += 0.5 * qdot.dot(deriv * qdot);
  }
  force -= mdot * qdot;

  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError("mass matrix is numerically degenerate (near-contact configuration?)");
  return llt.solve(force);
}

// ODE state layout: y = (q, qdot), both in basis ordering.
void unpack(const Eigen::VectorXd& y, const BubbleConfig& proto, PhaseState& out) {
  const int n = proto.count();
  out.config = proto;
  for (int i = 0; i < n; ++i) out.config.radii[i] = y(i);
  for (int i = 0; i < n; ++i) out.config.centers[i] = y.segment<3>(n + 3 * i);
  out.qdot = y.tail(4 * n);
}

Eigen::VectorXd pack(const PhaseState& state) {
  const int n = state.config.count();
  Eigen::VectorXd y(8 * n);
  for (int i = 0; i < n; ++i) y(i) = state.config.radii[i];
  for (int i = 0; i < n; ++i) y.segment<3>(n + 3 * i) = state.config.centers[i];
  y.tail(4 * n) = state.qdot;
  return y;
}

}  // namespace

void PhaseState::validate() const {
  config.validate();
  if (qdot.size() != 4 * config.count()) {
    std::ostringstream msg;
    msg << "generalized velocity has " << qdot.size() << " entries, expected "
        << 4 * config.count();
    throw ConfigError(msg.str());
  }
  if (!qdot.allFinite()) throw ConfigError("generalized velocity has non-finite entries");
}

Eigen::MatrixXd mass_matrix(const BubbleConfig& config, int degree, double tolerance) {
  ReflectionParams params;
  params.degree = degree;
  params.tolerance = tolerance;
  return gram(solve_reflections(config, params));
}

Eigen::VectorXd lagrange_rhs(const PhaseState& state, int degree, double tolerance,
                             double fd_step) {
  state.validate();
  const double step = fd_step > 0.0 ? fd_step : default_fd_step(state.config);
  MassSolver solver{.degree = degree, .tolerance = tolerance, .quantum = 1e-4 * step};
  return lagrange_rhs_impl(state, solver, step);
}

InviscidTrajectory integrate_inviscid(const PhaseState& init, double t_end,
                                      const InviscidParams& params,
                                      const std::vector<double>& sample_times) {
  init.validate();
  const AdmissibilityReport report = validate_admissible(init.config);
  if (!report.admissible) throw ConfigError("initial bubbles overlap");
  if (!(t_end > 0.0)) throw ConfigError("end time must be positive");
  if (!(params.tolerance > 0.0)) throw ConfigError("tolerance must be positive");
  for (double t : sample_times)
    if (!(t >= 0.0 && t <= t_end)) throw ConfigError("sample times must lie in [0, t_end]");

  const int n = init.config.count();
  double rmin = *std::min_element(init.config.radii.begin(), init.config.radii.end());
  const double threshold =
      params.collision_threshold > 0.0 ? params.collision_threshold : 1e-3 * rmin;
  if (n > 1 && report.min_gap <= threshold)
    throw ConfigError("initial gap already at or below the collision threshold");

  const double fd_step = params.fd_step > 0.0 ? params.fd_step : default_fd_step(init.config);
  MassSolver solver{.degree = params.degree, .tolerance = params.basis_tolerance, .quantum = 1e-4 * fd_step};

  const BubbleConfig proto = init.config;
  PhaseState scratch;
  const OdeRhs rhs = [&](double, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    dy.resize(y.size());
    unpack(y, proto, scratch);
    bool ok = scratch.qdot.allFinite();
    for (double r : scratch.config.radii) ok = ok && r > 0.0;
    if (ok)
      for (int i = 0; i < n && ok; ++i)
        ok = scratch.config.centers[i].allFinite();
    if (!ok || (n > 1 && min_gap(scratch.config) <= 0.0)) {
      dy.setConstant(std::numeric_limits<double>::quiet_NaN());
      return;
    }
    try {
      dy.head(4 * n) = scratch.qdot;
      dy.tail(4 * n) = lagrange_rhs_impl(scratch, solver, fd_step);
    } catch (const ConfigError&) {
      // Trial stage left the admissible set; the step controller retries
      // with a smaller step.
      dy.setConstant(std::numeric_limits<double>::quiet_NaN());
    } catch (const NumericalError&) {
      dy.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  };

  const OdeEvent gap_event = [&](double, const Eigen::VectorXd& y) {
    PhaseState s;
    unpack(y, proto, s);
    return min_gap(s.config) - threshold;
  };

  OdeOptions options;
  options.tolerance = params.tolerance;
  options.max_steps = params.max_steps;
  const OdeSolution sol = integrate_dopri5(rhs, 0.0, t_end, pack(init), options,
                                           n > 1 ? &gap_event : nullptr);

  InviscidTrajectory traj;
  traj.steps_accepted = sol.steps_accepted;
  traj.steps_rejected = sol.steps_rejected;
  traj.rhs_evaluations = sol.rhs_evaluations;
  traj.collision = sol.event_hit;
  if (sol.event_hit) traj.collision_time = sol.event_time;
  const double reached = sol.event_hit ? sol.event_time : sol.end_time();

  // Energy ledger at every accepted step (the mass cache already holds the
  // matrices for these states).
  const Eigen::MatrixXd m0 = solver.mass(init.config, true);
  const double e0 =
      kinetic_energy(init.qdot, m0) + potential_energy(init.config);
  for (double t : sol.step_times) {
    if (t > reached) break;
    PhaseState s;
    unpack(sol.eval(t), proto, s);
    const double ek = kinetic_energy(s.qdot, solver.mass(s.config, true));
    traj.ledger.append(t, ek, potential_energy(s.config), 0.0, e0);
  }

  std::vector<double> times = sample_times;
  std::sort(times.begin(), times.end());
  for (double t : times) {
    if (t > reached) continue;
    PhaseState s;
    unpack(sol.eval(t), proto, s);
    traj.times.push_back(t);
    traj.states.push_back(std::move(s));
  }
  if (sol.event_hit && (traj.times.empty() || traj.times.back() < sol.event_time)) {
    PhaseState s;
    unpack(sol.event_state, proto, s);
    traj.times.push_back(sol.event_time);
    traj.states.push_back(std::move(s));
  }
  return traj;
}

InviscidTrajectory integrate_inviscid(const PhaseState& init, double t_end,
                                      const InviscidParams& params, int n_samples) {
  if (n_samples < 2) throw ConfigError("need at least two sample times");
  std::vector<double> times(n_samples);
  for (int i = 0; i < n_samples; ++i)
    times[i] = t_end * static_cast<double>(i) / static_cast<double>(n_samples - 1);
  times.back() = t_end;
  return integrate_inviscid(init, t_end, params, times);
}

}  // namespace bubbleflow
