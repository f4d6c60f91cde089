#include "bubbleflow/ale.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bubbleflow/quadrature.hpp"

namespace bubbleflow {

namespace {

// Compactly supported bump exp(-1/(1-u^2)) on (-1,1), zero outside. chi is
// built from its antiderivative, normalized to total mass one. The profile is
// tabulated once: panel prefix sums plus a partial Gauss rule inside the
// panel give the antiderivative to near machine precision in O(1) per call.
double bump_raw(double u) {
  const double w = 1.0 - u * u;
  if (w <= 0.0) return 0.0;
  return std::exp(-1.0 / w);
}

struct BumpTable {
  static constexpr int kPanels = 512;
  std::array<double, kPanels + 1> prefix{};  // integral of bump_raw over [-1, edge_k]
  double mass = 0.0;                         // integral over [-1, 1]
  std::vector<double> gl_nodes, gl_weights;  // 24-point rule on [0, 1]

  BumpTable() {
    gauss_legendre(24, 0.0, 1.0, gl_nodes, gl_weights);
    prefix[0] = 0.0;
    for (int k = 0; k < kPanels; ++k) {
      const double a = -1.0 + 2.0 * k / kPanels;
      const double width = 2.0 / kPanels;
      double panel = 0.0;
      for (std::size_t q = 0; q < gl_nodes.size(); ++q)
        panel += gl_weights[q] * bump_raw(a + width * gl_nodes[q]);
      prefix[k + 1] = prefix[k] + width * panel;
    }
    mass = prefix[kPanels];
  }

  // Normalized antiderivative: 0 at w <= -1, 1 at w >= 1, smooth monotone.
  double cdf(double w) const {
    if (w <= -1.0) return 0.0;
    if (w >= 1.0) return 1.0;
    const double pos = (w + 1.0) / 2.0 * kPanels;
    int k = std::min(static_cast<int>(pos), kPanels - 1);
    const double a = -1.0 + 2.0 * k / kPanels;
    double partial = 0.0;
    const double width = w - a;
    for (std::size_t q = 0; q < gl_nodes.size(); ++q)
      partial += gl_weights[q] * bump_raw(a + width * gl_nodes[q]);
    return (prefix[k] + width * partial) / mass;
  }

  double pdf(double w) const { return bump_raw(w) / mass; }
};

const BumpTable& bump_table() {
  static const BumpTable table;
  return table;
}

// Gap between two linearly moving closed balls over one segment,
// parametrized by tau in [0, 1]: |A + tau B| - (c + tau d). Convex in tau,
// so a ternary search finds the interior minimum.
double min_segment_gap(const Vec3& A, const Vec3& B, double c, double d) {
  auto g = [&](double tau) { return (A + tau * B).norm() - (c + tau * d); };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 100; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (g(m1) <= g(m2))
      hi = m2;
    else
      lo = m1;
  }
  return std::min({g(0.0), g(1.0), g(0.5 * (lo + hi))});
}

}  // namespace

void AleField::validate() const {
  std::ostringstream msg;
  if (times.size() < 2 || times.size() != configs.size()) {
    msg << "need matching times/configs with at least two breakpoints; ";
    throw ConfigError(msg.str());
  }
  if (times.front() != 0.0) msg << "times must start at 0; ";
  for (std::size_t k = 0; k + 1 < times.size(); ++k)
    if (!(times[k] < times[k + 1])) {
      msg << "times must be strictly increasing; ";
      break;
    }
  if (!std::isfinite(times.back())) msg << "times must be finite; ";
  if (!(delta > 0.0) || !std::isfinite(delta)) msg << "delta must be positive; ";

  const int n = count();
  if (n < 1) msg << "need at least one bubble; ";
  for (const BubbleConfig& c : configs) {
    if (c.count() != n || static_cast<int>(c.radii.size()) != n) {
      msg << "every breakpoint must describe the same bubbles; ";
      break;
    }
    bool ok = true;
    for (int i = 0; i < n && ok; ++i)
      ok = c.centers[i].allFinite() && std::isfinite(c.radii[i]) && c.radii[i] > 0.0;
    if (!ok) {
      msg << "radii must be positive and centers finite at every breakpoint; ";
      break;
    }
  }
  if (!msg.str().empty()) throw ConfigError("invalid reference motion: " + msg.str());

  // Pairwise separation along the whole horizon. The distance of two
  // linearly moving centers is convex in time, so the gap can dip between
  // breakpoints; minimize it per segment.
  for (std::size_t k = 0; k + 1 < configs.size(); ++k) {
    const BubbleConfig& a = configs[k];
    const BubbleConfig& b = configs[k + 1];
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const Vec3 A = a.centers[i] - a.centers[j];
        const Vec3 B = (b.centers[i] - b.centers[j]) - A;
        const double c = a.radii[i] + a.radii[j];
        const double d = b.radii[i] + b.radii[j] - c;
        const double gap = min_segment_gap(A, B, c, d);
        if (gap < 4.0 * delta) {
          std::ostringstream err;
          err << "bubbles " << i << " and " << j << " come within gap " << gap
              << " on segment " << k << ", below the required 4*delta = " << 4.0 * delta;
          throw ConfigError(err.str());
        }
      }
  }
}

void AleField::sample(double t, std::vector<Vec3>& centers, std::vector<double>& radii,
                      std::vector<Vec3>& center_rates, std::vector<double>& radius_rates) const {
  if (!(t >= 0.0 && t <= horizon()))
    throw ConfigError("time outside the reference horizon");
  std::size_t k = std::upper_bound(times.begin(), times.end(), t) - times.begin();
  k = std::min(std::max<std::size_t>(k, 1), times.size() - 1) - 1;
  const double span = times[k + 1] - times[k];
  const double tau = (t - times[k]) / span;

  const int n = count();
  centers.resize(n);
  radii.resize(n);
  center_rates.resize(n);
  radius_rates.resize(n);
  const BubbleConfig& a = configs[k];
  const BubbleConfig& b = configs[k + 1];
  for (int i = 0; i < n; ++i) {
    centers[i] = (1.0 - tau) * a.centers[i] + tau * b.centers[i];
    radii[i] = (1.0 - tau) * a.radii[i] + tau * b.radii[i];
    center_rates[i] = (b.centers[i] - a.centers[i]) / span;
    radius_rates[i] = (b.radii[i] - a.radii[i]) / span;
  }
}

double AleField::identity_radius() const {
  double m = 0.0;
  for (const BubbleConfig& c : configs)
    for (int i = 0; i < c.count(); ++i)
      m = std::max(m, c.centers[i].norm() + c.radii[i]);
  return m + delta;
}

AleField interpolation_field(const BubbleConfig& from, const BubbleConfig& to, double delta) {
  AleField field;
  field.times = {0.0, 1.0};
  field.configs = {from, to};
  field.delta = delta;
  field.validate();
  return field;
}

double chi(const AleField& field, int i, double t, double s) {
  if (i < 0 || i >= field.count()) throw ConfigError("bubble index out of range");
  std::vector<Vec3> x, xd;
  std::vector<double> r, rd;
  field.sample(t, x, r, xd, rd);
  const double w = 4.0 * (r[i] + field.delta / 2.0 - s) / field.delta;
  return bump_table().cdf(w);
}

Vec3 v_ale(const AleField& field, double t, const Vec3& x) {
  std::vector<Vec3> centers, center_rates;
  std::vector<double> radii, radius_rates;
  field.sample(t, centers, radii, center_rates, radius_rates);

  Vec3 v = Vec3::Zero();
  for (int i = 0; i < field.count(); ++i) {
    const Vec3 d = x - centers[i];
    const double s = d.norm();
    const double w = 4.0 * (radii[i] + field.delta / 2.0 - s) / field.delta;
    if (w <= -1.0) continue;  // outside the cutoff
    const double cut = bump_table().cdf(w);
    v += cut * (center_rates[i] + (radius_rates[i] / radii[i]) * d);
  }
  return v;
}

Eigen::Matrix3d v_ale_gradient(const AleField& field, double t, const Vec3& x) {
  std::vector<Vec3> centers, center_rates;
  std::vector<double> radii, radius_rates;
  field.sample(t, centers, radii, center_rates, radius_rates);

  Eigen::Matrix3d grad = Eigen::Matrix3d::Zero();
  for (int i = 0; i < field.count(); ++i) {
    const Vec3 d = x - centers[i];
    const double s = d.norm();
    const double w = 4.0 * (radii[i] + field.delta / 2.0 - s) / field.delta;
    if (w <= -1.0) continue;
    const double cut = bump_table().cdf(w);
    const double dilation = radius_rates[i] / radii[i];
    grad += cut * dilation * Eigen::Matrix3d::Identity();
    const double slope = -4.0 / field.delta * bump_table().pdf(w);  // d(cut)/ds
    if (slope != 0.0 && s > 0.0) {
      const Vec3 u = center_rates[i] + dilation * d;
      grad += slope / s * u * d.transpose();
    }
  }
  return grad;
}

FlowMap::FlowMap(AleField field, double tolerance) : field_(std::move(field)), tol_(tolerance) {
  field_.validate();
  if (!(tol_ > 0.0)) throw ConfigError("flow tolerance must be positive");
  m0_ = field_.identity_radius();
}

FlowMap::Solution FlowMap::integrate_from(const Vec3& x) const {
  Eigen::VectorXd y(12);
  y.head<3>() = x;
  Eigen::Map<Eigen::Matrix3d>(y.data() + 3) = Eigen::Matrix3d::Identity();

  const OdeRhs rhs = [this](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    dy.resize(12);
    const Vec3 pos = y.head<3>();
    const Eigen::Map<const Eigen::Matrix3d> jac(y.data() + 3);
    dy.head<3>() = v_ale(field_, t, pos);
    Eigen::Map<Eigen::Matrix3d>(dy.data() + 3) = v_ale_gradient(field_, t, pos) * jac;
  };

  OdeOptions options;
  options.tolerance = tol_;
  Solution sol;
  sol.reserve(field_.times.size() - 1);
  for (std::size_t k = 0; k + 1 < field_.times.size(); ++k) {
    sol.push_back(integrate_dopri5(rhs, field_.times[k], field_.times[k + 1], y, options));
    y = sol.back().end_state();
  }
  return sol;
}

const FlowMap::Solution& FlowMap::solution(const Vec3& x) const {
  const std::array<double, 3> key{x(0), x(1), x(2)};
  const auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  if (cache_.size() > 4096) cache_.clear();
  return cache_.emplace(key, integrate_from(x)).first->second;
}

FlowResult FlowMap::eval(const Solution& sol, double t) const {
  std::size_t k = std::upper_bound(field_.times.begin(), field_.times.end(), t) -
                  field_.times.begin();
  k = std::min(std::max<std::size_t>(k, 1), field_.times.size() - 1) - 1;
  const Eigen::VectorXd y = sol[k].eval(t);

  FlowResult out;
  out.position = y.head<3>();
  out.jacobian = Eigen::Map<const Eigen::Matrix3d>(y.data() + 3);
  // Cofactor matrix by column cross products: Cof(J)^T J = det(J) I.
  out.cofactor.col(0) = out.jacobian.col(1).cross(out.jacobian.col(2));
  out.cofactor.col(1) = out.jacobian.col(2).cross(out.jacobian.col(0));
  out.cofactor.col(2) = out.jacobian.col(0).cross(out.jacobian.col(1));
  out.det = out.jacobian.col(0).dot(out.cofactor.col(0));
  if (!(out.det > 0.0))
    throw NumericalError("flow Jacobian lost positivity (invalid reference motion?)");
  return out;
}

FlowResult FlowMap::flow(double t, const Vec3& x) const {
  if (!(t >= 0.0 && t <= horizon()))
    throw ConfigError("time outside the reference horizon");
  if (t == 0.0 || x.norm() >= m0_) {
    FlowResult out;
    out.position = x;
    return out;  // the field vanishes here: identity, exactly
  }
  return eval(solution(x), t);
}

Vec3 FlowMap::map(double t, const Vec3& x) const { return flow(t, x).position; }

Vec3 FlowMap::inverse(double t, const Vec3& x) const {
  if (!(t >= 0.0 && t <= horizon()))
    throw ConfigError("time outside the reference horizon");
  if (t == 0.0 || x.norm() >= m0_) return x;

  // Initial guess: follow the field backward in time, then polish with
  // Newton on the forward map (the Jacobian is already propagated).
  const OdeRhs rhs = [&](double s, const Eigen::VectorXd& z, Eigen::VectorXd& dz) {
    dz.resize(3);
    dz = -v_ale(field_, t - s, Vec3(z));
  };
  OdeOptions options;
  options.tolerance = tol_;
  std::vector<double> stops{0.0};
  for (std::size_t k = field_.times.size(); k-- > 0;)
    if (field_.times[k] > 0.0 && field_.times[k] < t) stops.push_back(t - field_.times[k]);
  stops.push_back(t);
  Eigen::VectorXd z = x;
  for (std::size_t k = 0; k + 1 < stops.size(); ++k)
    z = integrate_dopri5(rhs, stops[k], stops[k + 1], z, options).end_state();

  Vec3 best = z.head<3>();
  double best_resid = std::numeric_limits<double>::infinity();
  Vec3 guess = best;
  for (int it = 0; it < 8; ++it) {
    const FlowResult f = eval(integrate_from(guess), t);
    const Vec3 resid = f.position - x;
    const double norm = resid.norm();
    if (norm < best_resid) {
      best_resid = norm;
      best = guess;
    }
    if (norm <= 1e-13 * (1.0 + x.norm())) break;
    guess -= f.jacobian.partialPivLu().solve(resid);
  }
  if (best_resid > 100.0 * tol_ * (1.0 + x.norm()))
    throw NumericalError("inverse flow Newton iteration did not converge");
  return best;
}

Vec3 pushforward(const FlowMap& flow, double t, const VectorField& v, const Vec3& x) {
  const Vec3 x0 = flow.inverse(t, x);
  const FlowResult f = flow.flow(t, x0);
  return (f.jacobian * v(x0)) / f.det;
}

Vec3 pullback(const FlowMap& flow, double t, const VectorField& v, const Vec3& x) {
  const FlowResult f = flow.flow(t, x);
  return f.cofactor.transpose() * v(f.position);
}

Vec3 transported_normal(const FlowMap& flow, double t, const Vec3& x0, const Vec3& n0) {
  const FlowResult f = flow.flow(t, x0);
  const Vec3 w = f.cofactor * n0;
  const double norm = w.norm();
  if (!(norm > 0.0)) throw NumericalError("transported normal degenerated");
  return w / norm;
}

}  // namespace bubbleflow
