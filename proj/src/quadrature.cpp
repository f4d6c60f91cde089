#include "bubbleflow/quadrature.hpp"

#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace bubbleflow {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr int kMaxSphereDegree = 512;
}  // namespace

void gauss_legendre(int n, double a, double b,
                    std::vector<double>& nodes, std::vector<double>& weights) {
  gsl_integration_glfixed_table* table =
      gsl_integration_glfixed_table_alloc(static_cast<std::size_t>(n));
  if (table == nullptr) throw NumericalError("gauss_legendre: table allocation failed");
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double xi = 0.0, wi = 0.0;
    gsl_integration_glfixed_point(a, b, static_cast<std::size_t>(i), &xi, &wi, table);
    nodes[i] = xi;
    weights[i] = wi;
  }
  gsl_integration_glfixed_table_free(table);
}

SphereRule make_sphere_rule(int degree) {
  if (degree < 0 || degree > kMaxSphereDegree)
    throw ConfigError("make_sphere_rule: degree " + std::to_string(degree) +
                      " outside supported range [0, " + std::to_string(kMaxSphereDegree) + "]");

  const int n_theta = degree / 2 + 1;  // Gauss-Legendre in u = cos(theta)
  const int n_phi = degree + 1;        // uniform azimuth, exact for trig degree <= n_phi-1

  std::vector<double> u, wu;
  gauss_legendre(n_theta, -1.0, 1.0, u, wu);

  SphereRule rule;
  rule.exactness_degree = degree;
  rule.nodes.reserve(static_cast<std::size_t>(n_theta) * n_phi);
  rule.weights.reserve(rule.nodes.capacity());
  const double wphi = 2.0 * kPi / n_phi;
  for (int it = 0; it < n_theta; ++it) {
    const double s = std::sqrt(std::max(0.0, 1.0 - u[it] * u[it]));
    for (int ip = 0; ip < n_phi; ++ip) {
      const double phi = wphi * ip;
      rule.nodes.emplace_back(s * std::cos(phi), s * std::sin(phi), u[it]);
      rule.weights.push_back(wu[it] * wphi);
    }
  }
  return rule;
}

double smooth_step(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  // Septic blend with three vanishing derivatives at both ends (C^3), so the
  // partition factors below are exact polynomials on aligned cells.
  const double s4 = s * s * s * s;
  return s4 * (35.0 + s * (-84.0 + s * (70.0 - s * 20.0)));
}

namespace {

// Radial partition factor of bubble i: 1 on [r, r+0.4w], 0 beyond r+0.8w.
double shell_profile(double rho, double r, double w) {
  return 1.0 - smooth_step((rho - (r + 0.4 * w)) / (0.4 * w));
}

struct RadialTable {
  std::vector<double> rho;
  std::vector<double> w;  // includes rho^2 factor
};

// Composite Gauss-Legendre with `cells` uniform cells per segment; `order`
// points per cell. The rho^2 volume factor is folded into the weights.
RadialTable radial_segments(const std::vector<std::pair<double, double>>& segments,
                            int cells, int order) {
  RadialTable table;
  std::vector<double> x, wx;
  for (const auto& [lo, hi] : segments) {
    if (!(hi > lo)) continue;
    const double h = (hi - lo) / cells;
    for (int c = 0; c < cells; ++c) {
      gauss_legendre(order, lo + c * h, lo + (c + 1) * h, x, wx);
      for (int k = 0; k < order; ++k) {
        table.rho.push_back(x[k]);
        table.w.push_back(wx[k] * x[k] * x[k]);
      }
    }
  }
  return table;
}

}  // namespace

ExteriorRule make_exterior_rule(const BubbleConfig& config,
                                const ExteriorRuleParams& params) {
  config.validate();
  const AdmissibilityReport adm = validate_admissible(config);
  if (!adm.admissible) throw ConfigError("make_exterior_rule: config not admissible");
  if (params.radial_cells_per_shell < 2 || params.radial_cells_near < 1 ||
      params.radial_cells_tail < 1 || params.sphere_degree < 0)
    throw ConfigError("make_exterior_rule: nonpositive resolution parameter");

  const SphereRule sphere = make_sphere_rule(params.sphere_degree);
  const int n = config.count();
  const int kOrder = 5;  // exact for the septic partition factor times rho^2

  ExteriorRule rule;
  double shell_measure = 0.0;  // sum over bubbles of 4pi * int rho^2 eta_i

  // Bubble-centered shells carrying the partition factor eta_i. Cells are
  // aligned with the profile breakpoints so the factor integrates exactly.
  for (int i = 0; i < n; ++i) {
    const double r = config.radii[i];
    const double w = params.shell_width_factor * adm.delta;
    const int half = std::max(1, params.radial_cells_per_shell / 2);
    RadialTable core = radial_segments({{r, r + 0.4 * w}}, half, kOrder);
    RadialTable blend = radial_segments({{r + 0.4 * w, r + 0.8 * w}}, half, kOrder);
    // Fold eta_i into the blend weights (identically 1 on the core).
    for (std::size_t k = 0; k < blend.rho.size(); ++k)
      blend.w[k] *= shell_profile(blend.rho[k], r, w);

    for (const RadialTable* part : {&core, &blend}) {
      for (std::size_t k = 0; k < part->rho.size(); ++k) {
        shell_measure += 4.0 * kPi * part->w[k];
        for (std::size_t j = 0; j < sphere.size(); ++j) {
          rule.nodes.push_back(config.centers[i] + part->rho[k] * sphere.nodes[j]);
          rule.weights.push_back(part->w[k] * sphere.weights[j]);
        }
      }
    }
  }

  // Remainder: origin-centered grid over the rest of the bounded region, with
  // the complementary partition factor; its weights are normalized to the
  // analytically known remainder measure.
  double scene = 0.0;   // outer reach of the shells
  double rho_lo = 0.0;  // ball around the origin covered by some bubble
  double balls = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = params.shell_width_factor * adm.delta;
    scene = std::max(scene, config.centers[i].norm() + config.radii[i] + w);
    rho_lo = std::max(rho_lo, config.radii[i] - config.centers[i].norm());
    balls += std::pow(config.radii[i], 3);
  }
  rho_lo = std::max(0.0, rho_lo);

  double outer = scene;
  if (params.mode == FarFieldMode::cutoff) {
    if (!(params.cutoff_radius >= scene))
      throw ConfigError("make_exterior_rule: cutoff_radius must be >= " +
                        std::to_string(scene));
    outer = params.cutoff_radius;
  }

  RadialTable near = radial_segments({{rho_lo, scene}}, params.radial_cells_near, kOrder);
  if (params.mode == FarFieldMode::cutoff && outer > scene) {
    RadialTable far = radial_segments({{scene, outer}}, params.radial_cells_tail, kOrder);
    near.rho.insert(near.rho.end(), far.rho.begin(), far.rho.end());
    near.w.insert(near.w.end(), far.w.begin(), far.w.end());
  }

  auto eta_rest = [&](const Vec3& x) {
    double s = 1.0;
    for (int i = 0; i < n; ++i)
      s -= shell_profile((x - config.centers[i]).norm(), config.radii[i],
                         params.shell_width_factor * adm.delta);
    return s;
  };

  std::vector<Vec3> rest_nodes;
  std::vector<double> rest_weights;
  double rest_raw = 0.0;
  for (std::size_t k = 0; k < near.rho.size(); ++k) {
    for (std::size_t j = 0; j < sphere.size(); ++j) {
      const Vec3 x = near.rho[k] * sphere.nodes[j];
      const double eta = eta_rest(x);
      if (eta == 0.0) continue;
      const double wt = near.w[k] * sphere.weights[j] * eta;
      rest_nodes.push_back(x);
      rest_weights.push_back(wt);
      rest_raw += wt;
    }
  }

  rule.bounded_measure = 4.0 * kPi / 3.0 * (std::pow(outer, 3) - balls);
  const double rest_exact = rule.bounded_measure - shell_measure;
  const double scale = (rest_raw > 0.0) ? rest_exact / rest_raw : 1.0;
  for (std::size_t k = 0; k < rest_nodes.size(); ++k) {
    rule.nodes.push_back(rest_nodes[k]);
    rule.weights.push_back(rest_weights[k] * scale);
  }
  rule.total_weight = shell_measure + rest_exact;
  rule.tail_begin = rule.nodes.size();

  if (params.mode == FarFieldMode::analytic_tail) {
    rule.has_tail = true;
    // w = scene/rho maps [scene, inf) to (0, 1]; a field decaying like
    // rho^-4..rho^-7 becomes a low-degree polynomial in w, integrated exactly.
    std::vector<double> x, wx;
    const double h = 1.0 / params.radial_cells_tail;
    for (int c = 0; c < params.radial_cells_tail; ++c) {
      gauss_legendre(kOrder, c * h, (c + 1) * h, x, wx);
      for (int k = 0; k < kOrder; ++k) {
        const double radial = wx[k] * std::pow(scene, 3) / std::pow(x[k], 4);
        for (std::size_t j = 0; j < sphere.size(); ++j) {
          rule.nodes.push_back((scene / x[k]) * sphere.nodes[j]);
          rule.weights.push_back(radial * sphere.weights[j]);
        }
      }
    }
  }

  return rule;
}

ExteriorIntegral exterior_integral(const std::function<double(const Vec3&)>& field,
                                   const BubbleConfig& config,
                                   const ExteriorRule& rule) {
  ExteriorIntegral result;
  double acc = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double f = field(rule.nodes[k]);
    if (!std::isfinite(f)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "exterior_integral: non-finite sample at node %zu, x = (%g, %g, %g)",
                    k, rule.nodes[k].x(), rule.nodes[k].y(), rule.nodes[k].z());
      throw NumericalError(buf);
    }
    acc += rule.weights[k] * f;
  }
  result.value = acc;

  if (!rule.has_tail) {
    // Estimate the neglected tail assuming |f| ~ C/rho^4 past the outermost
    // sampled radius: int_R^inf C rho^-4 4pi rho^2 drho = 4pi C / R.
    double outer = 0.0;
    for (int i = 0; i < config.count(); ++i)
      outer = std::max(outer, config.centers[i].norm() + config.radii[i]);
    double R = outer;
    for (const Vec3& xk : rule.nodes) R = std::max(R, xk.norm());
    double c_max = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
      for (double sign : {-1.0, 1.0}) {
        Vec3 probe = Vec3::Zero();
        probe[axis] = sign * R;
        const double f = field(probe);
        if (std::isfinite(f)) c_max = std::max(c_max, std::abs(f) * std::pow(R, 4));
      }
    }
    result.truncation_estimate = 4.0 * kPi * c_max / R;
  }
  return result;
}

Eigen::Matrix3d fd_jacobian(const std::function<Vec3(const Vec3&)>& field,
                            const Vec3& point, double step) {
  Eigen::Matrix3d jac;
  for (int j = 0; j < 3; ++j) {
    Vec3 dx = Vec3::Zero();
    dx[j] = step;
    jac.col(j) = (field(point + dx) - field(point - dx)) / (2.0 * step);
  }
  return jac;
}

double fd_divergence(const std::function<Vec3(const Vec3&)>& field,
                     const Vec3& point, double step) {
  double div = 0.0;
  for (int j = 0; j < 3; ++j) {
    Vec3 dx = Vec3::Zero();
    dx[j] = step;
    div += (field(point + dx)[j] - field(point - dx)[j]) / (2.0 * step);
  }
  return div;
}

}  // namespace bubbleflow
