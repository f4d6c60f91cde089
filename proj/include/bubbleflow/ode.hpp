#pragma once

// Adaptive Dormand-Prince 5(4) integrator with first-same-as-last stage
// reuse, quartic dense output on every accepted step, error-per-unit-time
// step control, and event localization on the dense interpolant. Kept
// minimal and deterministic: fixed evaluation order, no threading.

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "bubbleflow/geometry.hpp"

namespace bubbleflow {

struct OdeOptions {
  // Local error per unit time: a step of size h is accepted when the scaled
  // error estimate is at most tolerance * h, which makes the accumulated
  // drift over a fixed horizon proportional to the tolerance.
  double tolerance = 1e-10;
  double initial_step = 0.0;  // 0 -> automatic
  double max_step = 0.0;      // 0 -> span / 2
  std::size_t max_steps = 2000000;
  // Return the partial solution (flagged stopped_on_underflow) instead of
  // throwing when the step size underflows; used when approaching a genuine
  // finite-time singularity whose location is the answer.
  bool stop_on_underflow = false;
};

// Interpolant of one accepted step [t0, t0 + h].
struct DenseSegment {
  double t0 = 0.0;
  double h = 0.0;
  Eigen::MatrixXd rcont;  // n x 5 continuous-output coefficients

  Eigen::VectorXd eval(double t) const;
};

struct OdeSolution {
  std::vector<double> step_times;      // accepted endpoints; front() = start
  std::vector<DenseSegment> segments;  // one per accepted step
  bool event_hit = false;
  double event_time = 0.0;
  Eigen::VectorXd event_state;
  bool stopped_on_underflow = false;
  std::size_t steps_accepted = 0;
  std::size_t steps_rejected = 0;
  std::size_t rhs_evaluations = 0;

  double end_time() const { return step_times.back(); }
  Eigen::VectorXd end_state() const;
  // Dense evaluation anywhere in the covered span (clipped by the event time
  // when an event fired). Throws std::out_of_range outside it.
  Eigen::VectorXd eval(double t) const;
};

using OdeRhs = std::function<void(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;
// Scalar event function; integration stops at the first sign change (+ -> <= 0),
// localized on the dense output to near machine precision.
using OdeEvent = std::function<double(double, const Eigen::VectorXd&)>;

// Integrates y' = rhs(t, y) from t0 to t1 (t1 > t0). A non-finite RHS or
// error estimate rejects the step and halves it, so the right-hand side may
// signal "out of domain" by returning NaN. Throws NumericalError when the
// step size underflows or max_steps is exhausted.
OdeSolution integrate_dopri5(const OdeRhs& rhs, double t0, double t1,
                             const Eigen::VectorXd& y0, const OdeOptions& options,
                             const OdeEvent* event = nullptr);

}  // namespace bubbleflow
