#include "bubbleflow/ode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bubbleflow {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// b (order 5) minus bhat (order 4).
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Continuous-output weights.
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

}  // namespace

Eigen::VectorXd DenseSegment::eval(double t) const {
  const double theta = (t - t0) / h;
  const double theta1 = 1.0 - theta;
  // Horner form of the quartic interpolant.
  return rcont.col(0) +
         theta * (rcont.col(1) + theta1 * (rcont.col(2) +
                                           theta * (rcont.col(3) + theta1 * rcont.col(4))));
}

Eigen::VectorXd OdeSolution::end_state() const {
  if (event_hit) return event_state;
  const DenseSegment& last = segments.back();
  return last.eval(last.t0 + last.h);
}

Eigen::VectorXd OdeSolution::eval(double t) const {
  const double t_begin = step_times.front();
  const double t_final = event_hit ? event_time : step_times.back();
  const double span = std::max(std::abs(t_begin), std::abs(t_final));
  const double slack = 1e-12 * std::max(1.0, span);
  if (t < t_begin - slack || t > t_final + slack) {
    std::ostringstream msg;
    msg << "dense evaluation time " << t << " outside integrated span [" << t_begin << ", "
        << t_final << "]";
    throw std::out_of_range(msg.str());
  }
  const double tc = std::min(std::max(t, t_begin), t_final);
  // First segment whose right endpoint covers tc.
  const auto it = std::lower_bound(step_times.begin() + 1, step_times.end(), tc);
  const std::size_t idx =
      std::min(static_cast<std::size_t>(it - (step_times.begin() + 1)), segments.size() - 1);
  return segments[idx].eval(tc);
}

OdeSolution integrate_dopri5(const OdeRhs& rhs, double t0, double t1,
                             const Eigen::VectorXd& y0, const OdeOptions& options,
                             const OdeEvent* event) {
  if (!(t1 > t0)) throw std::invalid_argument("integration span must be forward");
  if (!(options.tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  const Eigen::Index n = y0.size();
  const double span = t1 - t0;
  const double hmax = options.max_step > 0.0 ? options.max_step : 0.5 * span;

  OdeSolution sol;
  sol.step_times.push_back(t0);

  Eigen::VectorXd y = y0, k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), y_next(n),
                  err(n);
  double t = t0;
  rhs(t, y, k1);
  ++sol.rhs_evaluations;
  if (!k1.allFinite()) throw NumericalError("ODE right-hand side not finite at the initial state");

  if (event) {
    if ((*event)(t, y) <= 0.0) {
      sol.event_hit = true;
      sol.event_time = t;
      sol.event_state = y;
      // Degenerate but well-formed solution: a single zero-length segment.
      DenseSegment seg;
      seg.t0 = t;
      seg.h = 0.0;
      seg.rcont = Eigen::MatrixXd::Zero(n, 5);
      seg.rcont.col(0) = y;
      sol.segments.push_back(seg);
      sol.step_times.push_back(t);
      return sol;
    }
  }

  // Starting step: conservative estimate from the initial slope.
  double h = options.initial_step;
  if (!(h > 0.0)) {
    double ynorm = 0.0, fnorm = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = 1.0 + std::abs(y(i));
      ynorm += (y(i) / sc) * (y(i) / sc);
      fnorm += (k1(i) / sc) * (k1(i) / sc);
    }
    ynorm = std::sqrt(ynorm / n);
    fnorm = std::sqrt(fnorm / n);
    h = (fnorm > 1e-10) ? 0.01 * std::max(ynorm, 0.1) / fnorm : 1e-6 * span;
    h = std::min(h, hmax);
  }

  const double safety = 0.9, shrink_min = 0.2, grow_max = 5.0;
  std::size_t step_count = 0;
  while (t < t1) {
    if (++step_count > options.max_steps)
      throw NumericalError("ODE step budget exhausted before reaching the end time");
    h = std::min(h, t1 - t);
    h = std::min(h, hmax);
    if (!(h > std::abs(t) * 1e-15 + 1e-300)) {
      if (options.stop_on_underflow && !sol.segments.empty()) {
        sol.stopped_on_underflow = true;
        return sol;
      }
      throw NumericalError("ODE step size underflow (unresolvable stiffness or singularity)");
    }

    ytmp = y + h * (a21 * k1);
    rhs(t + c2 * h, ytmp, k2);
    ytmp = y + h * (a31 * k1 + a32 * k2);
    rhs(t + c3 * h, ytmp, k3);
    ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    rhs(t + c4 * h, ytmp, k4);
    ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    rhs(t + c5 * h, ytmp, k5);
    ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    rhs(t + h, ytmp, k6);
    y_next = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    rhs(t + h, y_next, k7);  // FSAL stage
    sol.rhs_evaluations += 6;

    bool reject;
    double ratio = 0.0;
    if (!y_next.allFinite() || !k7.allFinite()) {
      reject = true;  // left the domain: retry with half the step
      h *= 0.5;
    } else {
      err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      // Scaled RMS of the embedded estimate, together with the level below
      // which the estimate is pure rounding noise: every stage derivative
      // carries relative machine error, so nothing finer than
      // eps * (h*max|k| + |y|) per component is resolvable.  Without this
      // floor the per-unit-time test can reject forever in regions where
      // |f| is huge (the reject ratio becomes independent of h).
      double acc = 0.0, res = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double ymag = std::max(std::abs(y(i)), std::abs(y_next(i)));
        const double sc = 1.0 + ymag;
        double kmax = std::abs(k1(i));
        kmax = std::max(kmax, std::abs(k2(i)));
        kmax = std::max(kmax, std::abs(k3(i)));
        kmax = std::max(kmax, std::abs(k4(i)));
        kmax = std::max(kmax, std::abs(k5(i)));
        kmax = std::max(kmax, std::abs(k6(i)));
        kmax = std::max(kmax, std::abs(k7(i)));
        const double q = err(i) / sc;
        const double r = (h * kmax + ymag) / sc;
        acc += q * q;
        res += r * r;
      }
      const double scaled = std::sqrt(acc / static_cast<double>(n));
      const double resolution =
          10.0 * std::numeric_limits<double>::epsilon() * std::sqrt(res / static_cast<double>(n));
      if (!std::isfinite(scaled)) {
        reject = true;
        h *= 0.5;
      } else {
        // Error per unit time <= tolerance (down to machine resolution); the
        // controller exponent is 1/4 because the local error of the pair
        // divided by h is O(h^4).
        ratio = scaled / (options.tolerance * h + resolution);
        reject = ratio > 1.0;
        const double factor = (ratio > 0.0)
                                  ? std::clamp(safety * std::pow(ratio, -0.25), shrink_min, grow_max)
                                  : grow_max;
        if (reject) {
          h *= std::min(factor, 0.9);
        } else {
          DenseSegment seg;
          seg.t0 = t;
          seg.h = h;
          seg.rcont.resize(n, 5);
          seg.rcont.col(0) = y;
          seg.rcont.col(1) = y_next - y;
          seg.rcont.col(2) = h * k1 - seg.rcont.col(1);
          seg.rcont.col(3) = seg.rcont.col(1) - h * k7 - seg.rcont.col(2);
          seg.rcont.col(4) =
              h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);

          const double t_new = t + h;
          if (event) {
            const double event_now = (*event)(t_new, y_next);
            ++sol.steps_accepted;
            if (event_now <= 0.0) {
              // g was positive at the step start; bracket holds.
              // Bisect the dense output for the crossing.
              double lo = t, hi = t_new;
              for (int it = 0; it < 120 && (hi - lo) > 1e-15 * std::max(1.0, std::abs(hi));
                   ++it) {
                const double mid = 0.5 * (lo + hi);
                if ((*event)(mid, seg.eval(mid)) <= 0.0)
                  hi = mid;
                else
                  lo = mid;
              }
              sol.event_hit = true;
              sol.event_time = hi;
              sol.event_state = seg.eval(hi);
              sol.segments.push_back(seg);
              sol.step_times.push_back(t_new);
              return sol;
            }
          } else {
            ++sol.steps_accepted;
          }

          sol.segments.push_back(seg);
          sol.step_times.push_back(t_new);
          t = t_new;
          y.swap(y_next);
          k1.swap(k7);  // FSAL
          h *= factor;
        }
      }
    }
    if (reject) ++sol.steps_rejected;
  }
  return sol;
}

}  // namespace bubbleflow
