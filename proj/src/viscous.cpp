#include "bubbleflow/viscous.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <utility>

#include "bubbleflow/kernels.hpp"

namespace bubbleflow {

namespace {

using kernels::dot;
using kernels::dot3;

constexpr double kFourPi = 4.0 * M_PI;

// Internal solver layers validate their configs fully (pressure constants
// included), but the window machinery deliberately accepts c_i = 0 as the
// forcing-free diagnostic limit. Geometry-only consumers get this copy.
BubbleConfig geometry_only(const BubbleConfig& config) {
  BubbleConfig g = config;
  std::fill(g.pressure_constants.begin(), g.pressure_constants.end(), 1.0);
  return g;
}

// First `count` fields of a solve as a standalone basis (monopole restriction;
// the fields are ordered monopoles first).
HarmonicBasis active_view(const HarmonicBasis& full, int count) {
  HarmonicBasis v;
  v.config = full.config;
  v.degree = full.degree;
  v.fields.assign(full.fields.begin(), full.fields.begin() + count);
  v.labels.assign(full.labels.begin(), full.labels.begin() + count);
  return v;
}

double min_radius(const BubbleConfig& config) {
  return *std::min_element(config.radii.begin(), config.radii.end());
}

// Frobenius product weights for the symmetric-part tables (xx, xy, xz, yy,
// yz, zz): off-diagonal entries count twice.
constexpr std::array<double, 6> kSymWeight = {1.0, 2.0, 2.0, 1.0, 2.0, 1.0};

// Everything the momentum balance needs at one instant that does not depend
// on the unknowns: basis solve, quadrature rules, field tables, Gram factor.
struct StageContext {
  double t = 0.0;
  BubbleConfig config;    // prescribed state (original pressure constants)
  HarmonicBasis full;     // complete 4N solve, used for warm chaining
  int m_g = 0;            // active gradient fields
  int m = 0;              // total fields (gradients + modes)
  bool moving = false;    // any prescribed rate nonzero
  std::size_t solves = 0;

  // Volume tables over the exterior rule (SoA, [field][node]).
  ExteriorRule rule;
  std::vector<std::vector<double>> gx, gy, gz;           // field values
  std::vector<std::array<std::vector<double>, 6>> sym;   // symmetric gradients
  std::vector<std::vector<double>> dgx, dgy, dgz;        // time derivatives

  // Surface tables: one sphere rule shared by all bubbles; per bubble and
  // field the vector trace at the rule nodes, plus the surface average of
  // b.n (the pressure column).
  SphereRule sphere;
  std::vector<std::vector<std::vector<double>>> sbx, sby, sbz;  // [bubble][field][node]
  std::vector<std::vector<double>> avg_bn;                      // [bubble][field]

  Eigen::MatrixXd gram;
  Eigen::LLT<Eigen::MatrixXd> llt;
};

int gradient_count(const BubbleConfig& config, const ReducedBasisParams& params) {
  return params.monopole_only ? config.count() : 4 * config.count();
}

// Evaluates the active gradient fields and the modes at `points`, appending
// mode columns after the gradient block.
void field_tables(const HarmonicBasis& active, const std::vector<SolenoidalMode>& modes,
                  const std::vector<Vec3>& points, std::vector<std::vector<double>>& fx,
                  std::vector<std::vector<double>>& fy, std::vector<std::vector<double>>& fz) {
  const int m_g = active.count();
  const int m = m_g + static_cast<int>(modes.size());
  const std::size_t n = points.size();
  BasisTables bt = eval_basis_tables(active, points, false);
  fx.assign(m, std::vector<double>(n, 0.0));
  fy.assign(m, std::vector<double>(n, 0.0));
  fz.assign(m, std::vector<double>(n, 0.0));
  for (int a = 0; a < m_g; ++a) {
    fx[a] = std::move(bt.gx[a]);
    fy[a] = std::move(bt.gy[a]);
    fz[a] = std::move(bt.gz[a]);
  }
  for (std::size_t s = 0; s < modes.size(); ++s) {
    const int a = m_g + static_cast<int>(s);
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3 v = modes[s].field(points[k]);
      fx[a][k] = v.x();
      fy[a][k] = v.y();
      fz[a][k] = v.z();
    }
  }
}

// Gram matrix of the combined basis: gradient block by boundary reduction,
// mode blocks by exterior quadrature.
Eigen::MatrixXd make_gram(const HarmonicBasis& active, const std::vector<SolenoidalMode>& modes,
                          const ExteriorRule& rule, const std::vector<std::vector<double>>& gx,
                          const std::vector<std::vector<double>>& gy,
                          const std::vector<std::vector<double>>& gz, int gram_degree) {
  const int m_g = active.count();
  const int m = m_g + static_cast<int>(modes.size());
  Eigen::MatrixXd G(m, m);
  G.topLeftCorner(m_g, m_g) = gram(active, gram_degree);
  if (m > m_g) {
    const double* w = rule.weights.data();
    const std::size_t n = rule.size();
    for (int a = 0; a < m; ++a) {
      for (int b = std::max(a, m_g); b < m; ++b) {
        const double v = dot3(w, gx[a].data(), gy[a].data(), gz[a].data(), gx[b].data(),
                              gy[b].data(), gz[b].data(), n);
        G(a, b) = v;
        G(b, a) = v;
      }
    }
  }
  return G;
}

// Conditioning guard: a near-dependent basis makes the coefficient solve
// meaningless, so fail loudly with the spectrum in the message. Kept apart
// from make_gram so the basis builder can diagnose non-orthogonal modes (a
// usage error) before their dependence trips this numerical check.
void require_well_conditioned(const Eigen::MatrixXd& G) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || lo < 1e-13 * hi) {
    std::ostringstream msg;
    msg << "velocity-basis Gram matrix is ill-conditioned: eigenvalues in [" << lo << ", " << hi
        << "]";
    throw NumericalError(msg.str());
  }
}

struct StageOptions {
  bool volume = true;  // build volume tables (false: Gram only)
};

// The prescribed motion a stage belongs to; a plain struct so both the
// window solver and the public window_rhs share the same assembly.
struct Motion {
  const BubbleConfig* base = nullptr;  // state at t_ref (original constants)
  double t_ref = 0.0;
  const std::vector<double>* radius_rates = nullptr;
  const std::vector<Vec3>* center_rates = nullptr;

  BubbleConfig at(double t) const {
    BubbleConfig c = *base;
    const double s = t - t_ref;
    for (int i = 0; i < c.count(); ++i) {
      c.radii[i] += s * (*radius_rates)[i];
      c.centers[i] += s * (*center_rates)[i];
    }
    return c;
  }

  bool moving() const {
    for (double r : *radius_rates)
      if (r != 0.0) return true;
    for (const Vec3& v : *center_rates)
      if (v != Vec3::Zero()) return true;
    return false;
  }
};

StageContext build_stage(const Motion& motion, double t, const SchemeParams& params,
                         const HarmonicBasis* warm, const StageOptions& options) {
  StageContext ctx;
  ctx.t = t;
  ctx.config = motion.at(t);
  ctx.moving = motion.moving();

  const BubbleConfig geom = geometry_only(ctx.config);
  ctx.full = solve_reflections(geom, params.basis.reflections, warm);
  ctx.solves = 1;
  ctx.m_g = gradient_count(geom, params.basis);
  ctx.m = ctx.m_g + static_cast<int>(params.modes.size());

  const HarmonicBasis active = active_view(ctx.full, ctx.m_g);
  const int N = geom.count();

  // Surface tables (always needed: accumulator rates, pressure, mismatch).
  ctx.sphere = make_sphere_rule(params.surface_degree);
  const std::size_t ns = ctx.sphere.size();
  std::vector<Vec3> spoints;
  spoints.reserve(static_cast<std::size_t>(N) * ns);
  for (int i = 0; i < N; ++i)
    for (std::size_t s = 0; s < ns; ++s)
      spoints.push_back(geom.centers[i] + geom.radii[i] * ctx.sphere.nodes[s]);
  std::vector<std::vector<double>> sfx, sfy, sfz;
  field_tables(active, params.modes, spoints, sfx, sfy, sfz);
  ctx.sbx.assign(N, std::vector<std::vector<double>>(ctx.m, std::vector<double>(ns)));
  ctx.sby = ctx.sbx;
  ctx.sbz = ctx.sbx;
  ctx.avg_bn.assign(N, std::vector<double>(ctx.m, 0.0));
  for (int i = 0; i < N; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * ns;
    for (int a = 0; a < ctx.m; ++a) {
      for (std::size_t s = 0; s < ns; ++s) {
        ctx.sbx[i][a][s] = sfx[a][off + s];
        ctx.sby[i][a][s] = sfy[a][off + s];
        ctx.sbz[i][a][s] = sfz[a][off + s];
      }
      double acc = 0.0;
      for (std::size_t s = 0; s < ns; ++s) {
        const Vec3& n = ctx.sphere.nodes[s];
        acc += ctx.sphere.weights[s] *
               (ctx.sbx[i][a][s] * n.x() + ctx.sby[i][a][s] * n.y() + ctx.sbz[i][a][s] * n.z());
      }
      ctx.avg_bn[i][a] = acc / kFourPi;
    }
  }

  if (options.volume) {
    ctx.rule = make_exterior_rule(geom, params.basis.exterior);
    field_tables(active, params.modes, ctx.rule.nodes, ctx.gx, ctx.gy, ctx.gz);

    const double hstep = params.basis.hessian_step > 0.0 ? params.basis.hessian_step
                                                         : 1e-5 * min_radius(geom);
    HessianTables ht = eval_hessian_tables(active, ctx.rule.nodes, hstep);
    ctx.sym.resize(ctx.m);
    for (int a = 0; a < ctx.m_g; ++a) ctx.sym[a] = std::move(ht.h[a]);
    const std::size_t n = ctx.rule.size();
    for (std::size_t s = 0; s < params.modes.size(); ++s) {
      const int a = ctx.m_g + static_cast<int>(s);
      for (auto& comp : ctx.sym[a]) comp.assign(n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const Eigen::Matrix3d J = params.modes[s].jacobian(ctx.rule.nodes[k]);
        ctx.sym[a][0][k] = J(0, 0);
        ctx.sym[a][1][k] = 0.5 * (J(0, 1) + J(1, 0));
        ctx.sym[a][2][k] = 0.5 * (J(0, 2) + J(2, 0));
        ctx.sym[a][3][k] = J(1, 1);
        ctx.sym[a][4][k] = 0.5 * (J(1, 2) + J(2, 1));
        ctx.sym[a][5][k] = J(2, 2);
      }
    }

    // Basis-motion coupling: the gradient fields change with the prescribed
    // geometry; difference two re-solves along the motion with frozen sweep
    // counts so the truncation error cancels. Static windows skip this.
    ctx.dgx.assign(ctx.m, std::vector<double>());
    ctx.dgy.assign(ctx.m, std::vector<double>());
    ctx.dgz.assign(ctx.m, std::vector<double>());
    if (ctx.moving) {
      const double dt = params.time_fd_step > 0.0 ? params.time_fd_step : 1e-5;
      ReflectionParams fd = params.basis.reflections;
      fd.fixed_sweeps = std::max<int>(1, static_cast<int>(ctx.full.sweep_history.size()));
      const HarmonicBasis plus = solve_reflections(geometry_only(motion.at(t + dt)), fd, &ctx.full);
      const HarmonicBasis minus =
          solve_reflections(geometry_only(motion.at(t - dt)), fd, &ctx.full);
      ctx.solves += 2;
      BasisTables tp = eval_basis_tables(active_view(plus, ctx.m_g), ctx.rule.nodes, false);
      BasisTables tm = eval_basis_tables(active_view(minus, ctx.m_g), ctx.rule.nodes, false);
      const double inv = 1.0 / (2.0 * dt);
      for (int a = 0; a < ctx.m_g; ++a) {
        ctx.dgx[a].resize(n);
        ctx.dgy[a].resize(n);
        ctx.dgz[a].resize(n);
        for (std::size_t k = 0; k < n; ++k) {
          ctx.dgx[a][k] = (tp.gx[a][k] - tm.gx[a][k]) * inv;
          ctx.dgy[a][k] = (tp.gy[a][k] - tm.gy[a][k]) * inv;
          ctx.dgz[a][k] = (tp.gz[a][k] - tm.gz[a][k]) * inv;
        }
      }
    }

    ctx.gram = make_gram(active, params.modes, ctx.rule, ctx.gx, ctx.gy, ctx.gz,
                         params.basis.gram_degree);
  } else {
    // Gram only: the mode blocks still need the volume rule.
    if (!params.modes.empty()) {
      ctx.rule = make_exterior_rule(geom, params.basis.exterior);
      field_tables(active, params.modes, ctx.rule.nodes, ctx.gx, ctx.gy, ctx.gz);
      ctx.gram = make_gram(active, params.modes, ctx.rule, ctx.gx, ctx.gy, ctx.gz,
                           params.basis.gram_degree);
    } else {
      ExteriorRule unused;
      ctx.gram = make_gram(active, params.modes, unused, ctx.gx, ctx.gy, ctx.gz,
                           params.basis.gram_degree);
    }
  }
  require_well_conditioned(ctx.gram);
  ctx.llt.compute(ctx.gram);
  if (ctx.llt.info() != Eigen::Success)
    throw NumericalError("velocity-basis Gram matrix factorization failed");
  return ctx;
}

// The assembled momentum balance at one stage. `constants`/`gamma` give the
// gas law, `racc` the accumulated radii entering the pressure forcing.
WindowDerivative assemble(const StageContext& ctx, const Eigen::VectorXd& U,
                          const std::vector<double>& racc,
                          const std::vector<double>& pressure_constants, double gamma,
                          const std::vector<double>& radius_rates,
                          const std::vector<Vec3>& center_rates, double nu, bool convection) {
  const int m = ctx.m;
  const int N = ctx.config.count();
  WindowDerivative d;
  d.momentum_rate = Eigen::VectorXd::Zero(m);
  d.radius_rates.assign(N, 0.0);
  d.center_rates.assign(N, Vec3::Zero());

  // ---- volume terms ----
  const std::size_t n = ctx.rule.size();
  if (n > 0) {
    const double* w = ctx.rule.weights.data();
    std::vector<double> ux(n, 0.0), uy(n, 0.0), uz(n, 0.0);
    for (int a = 0; a < m; ++a) {
      const double c = U[a];
      if (c == 0.0) continue;
      const double* axp = ctx.gx[a].data();
      const double* ayp = ctx.gy[a].data();
      const double* azp = ctx.gz[a].data();
      for (std::size_t k = 0; k < n; ++k) {
        ux[k] += c * axp[k];
        uy[k] += c * ayp[k];
        uz[k] += c * azp[k];
      }
    }

    // Symmetric gradient of u, with the Frobenius weights folded in.
    std::array<std::vector<double>, 6> husc;
    for (auto& v : husc) v.assign(n, 0.0);
    for (int a = 0; a < m; ++a) {
      const double c = U[a];
      if (c == 0.0) continue;
      for (int comp = 0; comp < 6; ++comp) {
        const double f = c * kSymWeight[comp];
        const double* src = ctx.sym[a][comp].data();
        double* dst = husc[comp].data();
        for (std::size_t k = 0; k < n; ++k) dst[k] += f * src[k];
      }
    }

    if (nu > 0.0) {
      for (int c = 0; c < m; ++c) {
        const double frob =
            dot3(w, ctx.sym[c][0].data(), ctx.sym[c][1].data(), ctx.sym[c][2].data(),
                 husc[0].data(), husc[1].data(), husc[2].data(), n) +
            dot3(w, ctx.sym[c][3].data(), ctx.sym[c][4].data(), ctx.sym[c][5].data(),
                 husc[3].data(), husc[4].data(), husc[5].data(), n);
        d.momentum_rate[c] -= 2.0 * nu * frob;
      }
      // |D(u)|^2 against itself; husc carries one factor of the Frobenius
      // weight, so divide it back out once.
      double diss = 0.0;
      for (int comp = 0; comp < 6; ++comp) {
        const double* a = husc[comp].data();
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += w[k] * a[k] * a[k];
        diss += s / kSymWeight[comp];
      }
      d.dissipation_rate = 2.0 * nu * diss;
    }

    if (ctx.moving) {
      for (int c = 0; c < ctx.m_g; ++c) {
        if (ctx.dgx[c].empty()) continue;
        d.momentum_rate[c] += dot3(w, ux.data(), uy.data(), uz.data(), ctx.dgx[c].data(),
                                   ctx.dgy[c].data(), ctx.dgz[c].data(), n);
      }
    }

    if (convection) {
      std::array<std::vector<double>, 6> uu;
      for (auto& v : uu) v.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        uu[0][k] = ux[k] * ux[k];
        uu[1][k] = 2.0 * ux[k] * uy[k];
        uu[2][k] = 2.0 * ux[k] * uz[k];
        uu[3][k] = uy[k] * uy[k];
        uu[4][k] = 2.0 * uy[k] * uz[k];
        uu[5][k] = uz[k] * uz[k];
      }
      for (int c = 0; c < m; ++c) {
        d.momentum_rate[c] +=
            dot3(w, ctx.sym[c][0].data(), ctx.sym[c][1].data(), ctx.sym[c][2].data(),
                 uu[0].data(), uu[1].data(), uu[2].data(), n) +
            dot3(w, ctx.sym[c][3].data(), ctx.sym[c][4].data(), ctx.sym[c][5].data(),
                 uu[3].data(), uu[4].data(), uu[5].data(), n);
      }
    }
  }

  // ---- surface terms ----
  const std::size_t ns = ctx.sphere.size();
  std::vector<double> sux(ns), suy(ns), suz(ns), un(ns);
  for (int i = 0; i < N; ++i) {
    std::fill(sux.begin(), sux.end(), 0.0);
    std::fill(suy.begin(), suy.end(), 0.0);
    std::fill(suz.begin(), suz.end(), 0.0);
    for (int a = 0; a < m; ++a) {
      const double c = U[a];
      if (c == 0.0) continue;
      for (std::size_t s = 0; s < ns; ++s) {
        sux[s] += c * ctx.sbx[i][a][s];
        suy[s] += c * ctx.sby[i][a][s];
        suz[s] += c * ctx.sbz[i][a][s];
      }
    }
    double rsum = 0.0;
    Vec3 xsum = Vec3::Zero();
    for (std::size_t s = 0; s < ns; ++s) {
      const Vec3& nrm = ctx.sphere.nodes[s];
      un[s] = sux[s] * nrm.x() + suy[s] * nrm.y() + suz[s] * nrm.z();
      rsum += ctx.sphere.weights[s] * un[s];
      xsum += ctx.sphere.weights[s] * un[s] * nrm;
    }
    d.radius_rates[i] = rsum / kFourPi;
    d.center_rates[i] = 3.0 / kFourPi * xsum;

    if (racc[i] <= 0.0) {
      std::ostringstream msg;
      msg << "accumulated radius of bubble " << i << " collapsed (" << racc[i] << ")";
      throw NumericalError(msg.str());
    }
    const double forcing = pressure_constants[i] * std::pow(racc[i], 2.0 - 3.0 * gamma);
    const double r = ctx.config.radii[i];
    const double area_factor = 0.5 * r * r;
    const double rdot_p = radius_rates[i];
    const Vec3& xdot_p = center_rates[i];
    for (int c = 0; c < m; ++c) {
      d.momentum_rate[c] += forcing * ctx.avg_bn[i][c];
      double mism = 0.0;
      for (std::size_t s = 0; s < ns; ++s) {
        const Vec3& nrm = ctx.sphere.nodes[s];
        const double gap = un[s] - rdot_p - xdot_p.dot(nrm);
        const double bu =
            ctx.sbx[i][c][s] * sux[s] + ctx.sby[i][c][s] * suy[s] + ctx.sbz[i][c][s] * suz[s];
        mism += ctx.sphere.weights[s] * gap * bu;
      }
      d.momentum_rate[c] += area_factor * mism;
    }
  }
  return d;
}

Motion window_motion(const WindowProblem& problem) {
  Motion mo;
  mo.base = &problem.base;
  mo.t_ref = problem.t_start;
  mo.radius_rates = &problem.radius_rates;
  mo.center_rates = &problem.center_rates;
  return mo;
}

// Smallest prescribed pairwise gap over the window (exact for the affine
// motion: candidate times are the endpoints and the real roots of the
// stationarity quadratic of each pair's gap).
double window_min_gap(const WindowProblem& problem) {
  const int N = problem.base.count();
  if (N < 2) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < N; ++i) {
    for (int j = i + 1; j < N; ++j) {
      const Vec3 dx = problem.base.centers[i] - problem.base.centers[j];
      const Vec3 dv = problem.center_rates[i] - problem.center_rates[j];
      const double rho0 = problem.base.radii[i] + problem.base.radii[j];
      const double rhodot = problem.radius_rates[i] + problem.radius_rates[j];
      const double A = dv.squaredNorm();
      const double B = 2.0 * dx.dot(dv);
      const double C = dx.squaredNorm();
      std::vector<double> candidates = {0.0, problem.h};
      // d/dt (sqrt(q) - rho) = 0  <=>  (q')^2 = 4 rhodot^2 q, a quadratic.
      const double qa = 4.0 * A * A - 4.0 * rhodot * rhodot * A;
      const double qb = 4.0 * A * B - 4.0 * rhodot * rhodot * B;
      const double qc = B * B - 4.0 * rhodot * rhodot * C;
      if (std::abs(qa) > 0.0) {
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc >= 0.0) {
          const double root = std::sqrt(disc);
          candidates.push_back((-qb + root) / (2.0 * qa));
          candidates.push_back((-qb - root) / (2.0 * qa));
        }
      } else if (std::abs(qb) > 0.0) {
        candidates.push_back(-qc / qb);
      }
      for (double s : candidates) {
        if (!(s >= 0.0 && s <= problem.h)) continue;
        const double q = std::max(0.0, A * s * s + B * s + C);
        best = std::min(best, std::sqrt(q) - (rho0 + s * rhodot));
      }
    }
  }
  return best;
}

// Non-throwing admissibility check shared by validate() and run_scheme's
// truncation logic. Empty string = admissible.
std::string window_admissibility_issue(const WindowProblem& problem) {
  std::ostringstream msg;
  for (int i = 0; i < problem.base.count(); ++i) {
    const double r0 = problem.base.radii[i];
    const double r1 = r0 + problem.h * problem.radius_rates[i];
    if (!(r0 > 0.0) || !(r1 > 0.0)) {
      msg << "prescribed radius of bubble " << i << " is not positive over the window; ";
    }
  }
  if (problem.base.count() >= 2) {
    double margin = problem.margin_delta;
    // Margin fallback is purely geometric; sanitize so zero-forcing windows pass.
    if (margin <= 0.0) margin = validate_admissible(geometry_only(problem.base)).delta;
    const double gap = window_min_gap(problem);
    if (!(gap >= 2.0 * margin)) {
      msg << "prescribed gap " << gap << " falls below the admissibility margin " << 2.0 * margin
          << "; ";
    }
  }
  return msg.str();
}

double effective_energy_tolerance(const SchemeParams& params, double E0) {
  return params.energy_tolerance * std::max(std::abs(E0), 1.0);
}

struct WindowChain {
  const HarmonicBasis* warm = nullptr;   // last solve, for warm starting
  const Eigen::VectorXd* momentum = nullptr;  // W at t_start if already known
};

WindowResult solve_window_impl(const WindowProblem& problem, const SchemeParams& params,
                               WindowChain chain, HarmonicBasis* warm_out,
                               Eigen::VectorXd* momentum_out) {
  problem.validate();
  params.validate();
  const int N = problem.base.count();
  const int m = gradient_count(problem.base, params.basis) + static_cast<int>(params.modes.size());
  if (problem.initial_coefficients.size() != m) {
    std::ostringstream msg;
    msg << "initial coefficient vector has length " << problem.initial_coefficients.size()
        << ", expected " << m;
    throw ConfigError(msg.str());
  }

  const Motion motion = window_motion(problem);
  WindowResult out;

  // State entering the window. The Gram solve at t_start is skipped when the
  // caller already knows the momentum and the energy budget.
  StageOptions gram_only;
  gram_only.volume = !params.modes.empty();  // mode Gram blocks need the volume rule
  double E_ref = problem.energy_reference;
  const bool need_start = chain.momentum == nullptr || std::isnan(E_ref);
  HarmonicBasis start_basis;
  const HarmonicBasis* warm_seed = chain.warm;
  Eigen::VectorXd W0;
  if (need_start) {
    StageContext start = build_stage(motion, problem.t_start, params, warm_seed, gram_only);
    W0 = chain.momentum != nullptr ? *chain.momentum
                                   : Eigen::VectorXd(start.gram * problem.initial_coefficients);
    if (std::isnan(E_ref)) {
      E_ref = 0.5 * problem.initial_coefficients.dot(W0) +
              potential_energy(problem.initial_accumulated_radii, problem.base.pressure_constants,
                               problem.base.gamma) +
              problem.dissipated_before;
    }
    start_basis = std::move(start.full);
    warm_seed = &start_basis;
  } else {
    W0 = *chain.momentum;
  }
  const double slack_tol = effective_energy_tolerance(params, E_ref);

  int nsub = std::max(1, params.min_substeps);
  int halvings = 0;

  for (;;) {
    bool reject = false;
    const double dt = problem.h / nsub;
    HarmonicBasis warm;
    bool have_warm = warm_seed != nullptr;
    if (have_warm) warm = *warm_seed;

    WindowState state;
    state.time = problem.t_start;
    state.coefficients = problem.initial_coefficients;
    state.accumulated_radii = problem.initial_accumulated_radii;
    state.accumulated_centers = problem.initial_accumulated_centers;

    out.states.assign(1, state);
    out.ledger.clear();
    out.dissipated = 0.0;
    Eigen::VectorXd W = W0;

    for (int j = 0; j < nsub && !reject; ++j) {
      const double t_mid = problem.t_start + (j + 0.5) * dt;
      StageContext stage =
          build_stage(motion, t_mid, params, have_warm ? &warm : nullptr, StageOptions{});
      warm = stage.full;
      have_warm = true;

      // Implicit midpoint: the stage state solves Y = Y_n + dt/2 F(t_mid, Y).
      Eigen::VectorXd Wm = W;
      std::vector<double> rm = state.accumulated_radii;
      std::vector<Vec3> xm = state.accumulated_centers;
      WindowDerivative deriv;
      bool converged = false;
      for (int it = 0; it < params.max_midpoint_iterations; ++it) {
        const Eigen::VectorXd Um = stage.llt.solve(Wm);
        deriv = assemble(stage, Um, rm, problem.base.pressure_constants, problem.base.gamma,
                         problem.radius_rates, problem.center_rates, params.nu, params.convection);
        ++out.rhs_evaluations;
        const Eigen::VectorXd Wnext = W + 0.5 * dt * deriv.momentum_rate;
        double shift = (Wnext - Wm).cwiseAbs().maxCoeff();
        double scale = 1.0 + Wnext.cwiseAbs().maxCoeff();
        for (int i = 0; i < N; ++i) {
          const double rnext = state.accumulated_radii[i] + 0.5 * dt * deriv.radius_rates[i];
          shift = std::max(shift, std::abs(rnext - rm[i]));
          scale = std::max(scale, 1.0 + std::abs(rnext));
          rm[i] = rnext;
          const Vec3 xnext = state.accumulated_centers[i] + 0.5 * dt * deriv.center_rates[i];
          shift = std::max(shift, (xnext - xm[i]).cwiseAbs().maxCoeff());
          xm[i] = xnext;
        }
        Wm = Wnext;
        if (shift <= params.midpoint_tolerance * scale) {
          converged = true;
          break;
        }
      }
      if (!converged) {
        reject = true;
        break;
      }

      // Advance with the converged stage derivative.
      W += dt * deriv.momentum_rate;
      state.time = problem.t_start + (j + 1) * dt;
      for (int i = 0; i < N; ++i) {
        state.accumulated_radii[i] += dt * deriv.radius_rates[i];
        state.accumulated_centers[i] += dt * deriv.center_rates[i];
      }
      out.dissipated += dt * deriv.dissipation_rate;

      // Honest endpoint energy: coefficients through the endpoint Gram.
      StageContext end = build_stage(motion, state.time, params, &warm, gram_only);
      warm = end.full;
      state.coefficients = end.llt.solve(W);
      const double kin = 0.5 * state.coefficients.dot(W);
      const double pot = potential_energy(state.accumulated_radii,
                                          problem.base.pressure_constants, problem.base.gamma);
      const double cum = problem.dissipated_before + out.dissipated;
      EnergySample row;
      row.time = state.time;
      row.kinetic = kin;
      row.potential = pot;
      row.cumulative_dissipation = cum;
      row.slack = E_ref - (kin + pot + cum);
      if (row.slack < -slack_tol) {
        reject = true;
        break;
      }
      out.ledger.push_back(row);
      out.states.push_back(state);
    }

    if (!reject) {
      out.substeps = nsub;
      out.halvings = halvings;
      if (warm_out != nullptr) *warm_out = warm;
      if (momentum_out != nullptr) *momentum_out = W;
      return out;
    }
    ++halvings;
    if (halvings > params.max_halvings) {
      std::ostringstream msg;
      msg << "window starting at t = " << problem.t_start
          << " kept violating the energy inequality after " << params.max_halvings
          << " halvings (substeps " << nsub << ")";
      throw NumericalError(msg.str());
    }
    nsub *= 2;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

void SchemeParams::validate() const {
  std::ostringstream msg;
  if (!(h > 0.0) || !std::isfinite(h)) msg << "window length h must be positive; ";
  if (!(T > 0.0) || !std::isfinite(T)) msg << "final time T must be positive; ";
  if (h > 0.0 && T > 0.0) {
    const double ratio = T / h;
    if (std::abs(ratio - std::llround(ratio)) > 1e-9 * std::max(1.0, ratio))
      msg << "T/h must be a positive integer (got " << ratio << "); ";
  }
  if (!(nu >= 0.0)) msg << "viscosity must be nonnegative; ";
  if (surface_degree < 2) msg << "surface quadrature degree must be at least 2; ";
  if (basis.reflections.degree < 1) msg << "basis degree must be at least 1; ";
  if (!(midpoint_tolerance > 0.0)) msg << "midpoint tolerance must be positive; ";
  if (max_midpoint_iterations < 2) msg << "midpoint iteration cap must be at least 2; ";
  if (!(energy_tolerance > 0.0)) msg << "energy tolerance must be positive; ";
  if (max_halvings < 0) msg << "max halvings must be nonnegative; ";
  if (min_substeps < 1) msg << "min substeps must be at least 1; ";
  if (!(time_fd_step >= 0.0)) msg << "time FD step must be nonnegative; ";
  const std::string text = msg.str();
  if (!text.empty()) throw ConfigError("invalid scheme parameters: " + text);
}

BubbleConfig WindowProblem::at(double t) const { return window_motion(*this).at(t); }

void WindowProblem::validate() const {
  std::ostringstream msg;
  const int N = base.count();
  if (N < 1) msg << "window needs at least one bubble; ";
  if (!(h > 0.0) || !std::isfinite(h)) msg << "window length must be positive; ";
  if (!std::isfinite(t_start)) msg << "window start time must be finite; ";
  if (static_cast<int>(base.radii.size()) != N ||
      static_cast<int>(base.pressure_constants.size()) != N)
    msg << "base configuration sizes are inconsistent; ";
  if (!(base.gamma > 1.0)) msg << "adiabatic exponent must exceed 1; ";
  for (double c : base.pressure_constants)
    if (!(c >= 0.0) || !std::isfinite(c)) msg << "pressure constants must be nonnegative; ";
  if (static_cast<int>(radius_rates.size()) != N || static_cast<int>(center_rates.size()) != N)
    msg << "prescribed rate vectors must have one entry per bubble; ";
  for (double r : radius_rates)
    if (!std::isfinite(r)) msg << "prescribed radius rates must be finite; ";
  for (const Vec3& v : center_rates)
    if (!v.allFinite()) msg << "prescribed center rates must be finite; ";
  if (static_cast<int>(initial_accumulated_radii.size()) != N ||
      static_cast<int>(initial_accumulated_centers.size()) != N)
    msg << "accumulator vectors must have one entry per bubble; ";
  for (double r : initial_accumulated_radii)
    if (!(r > 0.0)) msg << "accumulated radii must be positive; ";
  if (!initial_coefficients.allFinite()) msg << "initial coefficients must be finite; ";
  if (!(dissipated_before >= 0.0)) msg << "dissipated_before must be nonnegative; ";
  if (!(margin_delta >= 0.0)) msg << "margin_delta must be nonnegative; ";
  if (msg.str().empty()) {
    const std::string issue = window_admissibility_issue(*this);
    if (!issue.empty()) msg << issue;
  }
  const std::string text = msg.str();
  if (!text.empty()) throw ConfigError("invalid window: " + text);
}

ReducedBasis build_reduced_basis(const BubbleConfig& config, double nu,
                                 const std::vector<SolenoidalMode>& modes,
                                 const ReducedBasisParams& params) {
  geometry_only(config).validate();
  if (!(nu >= 0.0)) throw ConfigError("viscosity must be nonnegative");

  ReducedBasis basis;
  basis.config = config;
  basis.nu = nu;
  basis.params = params;
  basis.modes = modes;

  const BubbleConfig geom = geometry_only(config);
  basis.gradients = solve_reflections(geom, params.reflections, nullptr);
  basis.active_gradients = gradient_count(geom, params);

  const HarmonicBasis active = active_view(basis.gradients, basis.active_gradients);
  ExteriorRule rule;
  std::vector<std::vector<double>> gx, gy, gz;
  if (!modes.empty()) {
    rule = make_exterior_rule(geom, params.exterior);
    field_tables(active, modes, rule.nodes, gx, gy, gz);
  }
  basis.gram = make_gram(active, modes, rule, gx, gy, gz, params.gram_degree);

  // The modes were promised tangent to every sphere, which makes them
  // orthogonal to all potential gradients; a visible coupling means the
  // promise is broken.
  if (!modes.empty()) {
    const int m_g = basis.active_gradients;
    const double coupling =
        basis.gram.topRightCorner(m_g, modes.size()).cwiseAbs().maxCoeff();
    if (coupling > params.orthogonality_tolerance) {
      std::ostringstream msg;
      msg << "solenoidal modes are not orthogonal to the gradient fields (max coupling "
          << coupling << "); they must be divergence-free and tangent to every sphere";
      throw ConfigError(msg.str());
    }
  }
  require_well_conditioned(basis.gram);

  basis.dissipation = dissipation_matrix(basis, config, nu);
  return basis;
}

Eigen::MatrixXd dissipation_matrix(const ReducedBasis& basis, const BubbleConfig& config,
                                   double nu) {
  if (config.count() != basis.config.count())
    throw ConfigError("configuration does not match the basis geometry");
  for (int i = 0; i < config.count(); ++i) {
    if ((config.centers[i] - basis.config.centers[i]).norm() > 1e-12 ||
        std::abs(config.radii[i] - basis.config.radii[i]) > 1e-12)
      throw ConfigError("configuration does not match the basis geometry");
  }
  if (!(nu >= 0.0)) throw ConfigError("viscosity must be nonnegative");

  const int m = basis.size();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(m, m);
  if (nu == 0.0) return D;

  const BubbleConfig geom = geometry_only(config);
  const ExteriorRule rule = make_exterior_rule(geom, basis.params.exterior);
  const HarmonicBasis active = active_view(basis.gradients, basis.active_gradients);
  const double hstep = basis.params.hessian_step > 0.0 ? basis.params.hessian_step
                                                       : 1e-5 * min_radius(geom);
  HessianTables ht = eval_hessian_tables(active, rule.nodes, hstep);
  std::vector<std::array<std::vector<double>, 6>> sym(m);
  for (int a = 0; a < basis.active_gradients; ++a) sym[a] = std::move(ht.h[a]);
  const std::size_t n = rule.size();
  for (std::size_t s = 0; s < basis.modes.size(); ++s) {
    const int a = basis.active_gradients + static_cast<int>(s);
    for (auto& comp : sym[a]) comp.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const Eigen::Matrix3d J = basis.modes[s].jacobian(rule.nodes[k]);
      sym[a][0][k] = J(0, 0);
      sym[a][1][k] = 0.5 * (J(0, 1) + J(1, 0));
      sym[a][2][k] = 0.5 * (J(0, 2) + J(2, 0));
      sym[a][3][k] = J(1, 1);
      sym[a][4][k] = 0.5 * (J(1, 2) + J(2, 1));
      sym[a][5][k] = J(2, 2);
    }
  }

  const double* w = rule.weights.data();
  std::array<std::vector<double>, 6> scaled;
  for (int a = 0; a < m; ++a) {
    for (int comp = 0; comp < 6; ++comp) {
      scaled[comp].assign(n, 0.0);
      const double f = kSymWeight[comp];
      const double* src = sym[a][comp].data();
      for (std::size_t k = 0; k < n; ++k) scaled[comp][k] = f * src[k];
    }
    for (int b = a; b < m; ++b) {
      const double frob = dot3(w, sym[b][0].data(), sym[b][1].data(), sym[b][2].data(),
                               scaled[0].data(), scaled[1].data(), scaled[2].data(), n) +
                          dot3(w, sym[b][3].data(), sym[b][4].data(), sym[b][5].data(),
                               scaled[3].data(), scaled[4].data(), scaled[5].data(), n);
      D(a, b) = 2.0 * nu * frob;
      D(b, a) = D(a, b);
    }
  }
  return D;
}

WindowDerivative window_rhs(const WindowProblem& problem, const WindowState& state,
                            const ReducedBasis& basis, const SchemeParams& params) {
  problem.validate();
  params.validate();
  const BubbleConfig expected = problem.at(state.time);
  if (expected.count() != basis.config.count())
    throw ConfigError("basis bubble count does not match the window");
  for (int i = 0; i < expected.count(); ++i) {
    if ((expected.centers[i] - basis.config.centers[i]).norm() > 1e-10 ||
        std::abs(expected.radii[i] - basis.config.radii[i]) > 1e-10)
      throw ConfigError("basis was not built at the prescribed configuration for this time");
  }
  if (static_cast<int>(state.accumulated_radii.size()) != expected.count() ||
      static_cast<int>(state.accumulated_centers.size()) != expected.count())
    throw ConfigError("state accumulator sizes do not match the configuration");

  SchemeParams stage_params = params;
  stage_params.basis = basis.params;
  stage_params.modes = basis.modes;
  const Motion motion = window_motion(problem);
  StageContext ctx = build_stage(motion, state.time, stage_params, &basis.gradients,
                                 StageOptions{});
  if (state.coefficients.size() != ctx.m) {
    std::ostringstream msg;
    msg << "coefficient vector has length " << state.coefficients.size() << ", expected "
        << ctx.m;
    throw ConfigError(msg.str());
  }
  return assemble(ctx, state.coefficients, state.accumulated_radii,
                  problem.base.pressure_constants, problem.base.gamma, problem.radius_rates,
                  problem.center_rates, params.nu, params.convection);
}

WindowResult solve_window(const WindowProblem& problem, const SchemeParams& params) {
  return solve_window_impl(problem, params, WindowChain{}, nullptr, nullptr);
}

double separation_horizon(double E0, double delta0, const BubbleConfig& config) {
  geometry_only(config).validate();
  if (!(delta0 > 0.0)) throw ConfigError("separation width delta0 must be positive");
  if (!(E0 >= 0.0)) throw ConfigError("energy bound must be nonnegative");
  if (E0 == 0.0) return std::numeric_limits<double>::infinity();

  const VelocityBounds bounds = apriori_velocity_bounds(E0, delta0, config);
  const double C_R = *std::max_element(bounds.radial.begin(), bounds.radial.end());
  const double C_X = *std::max_element(bounds.center.begin(), bounds.center.end());
  if (C_R <= 0.0) return std::numeric_limits<double>::infinity();

  const double sup_r = *std::max_element(config.radii.begin(), config.radii.end());
  const double inf_r = min_radius(config);
  double T0 = std::min(sup_r / C_R, inf_r / (2.0 * C_R));
  if (config.count() >= 2) T0 = std::min(T0, delta0 / (4.0 * (C_R + C_X)));
  return T0;
}

ViscousTrajectory run_scheme(const Eigen::VectorXd& initial_coefficients,
                             const BubbleConfig& config, const SchemeParams& params) {
  config.validate();
  params.validate();
  const AdmissibilityReport adm = validate_admissible(config);
  if (!adm.admissible) throw ConfigError("initial configuration is not admissible");
  const double delta0 = adm.delta;
  const int N = config.count();
  const int m = gradient_count(config, params.basis) + static_cast<int>(params.modes.size());
  if (initial_coefficients.size() != m) {
    std::ostringstream msg;
    msg << "initial coefficient vector has length " << initial_coefficients.size()
        << ", expected " << m;
    throw ConfigError(msg.str());
  }

  const std::size_t n_windows = static_cast<std::size_t>(std::llround(params.T / params.h));
  if (n_windows > params.max_windows) throw ConfigError("T/h exceeds the window cap");

  ViscousTrajectory out;

  // Initial energy: kinetic through the Gram at t = 0 plus the gas potential.
  std::vector<double> zero_r(N, 0.0);
  std::vector<Vec3> zero_x(N, Vec3::Zero());
  WindowProblem seed;
  seed.t_start = 0.0;
  seed.h = params.h;
  seed.base = config;
  seed.radius_rates = zero_r;
  seed.center_rates = zero_x;
  const Motion seed_motion = window_motion(seed);
  StageOptions gram_only;
  gram_only.volume = !params.modes.empty();
  StageContext start = build_stage(seed_motion, 0.0, params, nullptr, gram_only);
  Eigen::VectorXd W = start.gram * initial_coefficients;
  const double kin0 = 0.5 * initial_coefficients.dot(W);
  const double pot0 = potential_energy(config);
  const double E0 = kin0 + pot0;
  out.energy_reference = E0;
  out.horizon = separation_horizon(E0, delta0, config);
  out.ledger.append(0.0, kin0, pot0, 0.0, E0);

  const double collision_threshold =
      params.collision_threshold > 0.0 ? params.collision_threshold : 1e-3 * min_radius(config);

  ViscousSample sample;
  sample.time = 0.0;
  sample.prescribed_radii = config.radii;
  sample.prescribed_centers = config.centers;
  sample.accumulated_radii = config.radii;
  sample.accumulated_centers = config.centers;
  sample.coefficients = initial_coefficients;
  out.samples.push_back(sample);

  WindowProblem problem;
  problem.h = params.h;
  problem.base = config;
  problem.radius_rates = zero_r;  // window 0 holds the bubbles fixed
  problem.center_rates = zero_x;
  problem.initial_coefficients = initial_coefficients;
  problem.initial_accumulated_radii = config.radii;
  problem.initial_accumulated_centers = config.centers;
  problem.energy_reference = E0;
  problem.margin_delta = delta0;

  HarmonicBasis warm = start.full;
  double dissipated = 0.0;
  out.stop = SchemeStop::completed;
  out.stop_time = 0.0;

  for (std::size_t k = 0; k < n_windows; ++k) {
    const double t_k = k * params.h;
    problem.t_start = t_k;
    out.stop_time = t_k;

    if (params.enforce_horizon && t_k + params.h > out.horizon * (1.0 + 1e-12)) {
      out.stop = SchemeStop::horizon;
      return out;
    }
    if (window_min_gap(problem) <= collision_threshold) {
      out.stop = SchemeStop::collision;
      return out;
    }
    if (!window_admissibility_issue(problem).empty()) {
      out.stop = SchemeStop::admissibility;
      return out;
    }

    WindowChain chain;
    chain.warm = &warm;
    chain.momentum = k == 0 ? nullptr : &W;
    HarmonicBasis warm_next;
    Eigen::VectorXd W_next;
    WindowResult res = solve_window_impl(problem, params, chain, &warm_next, &W_next);
    warm = std::move(warm_next);
    W = std::move(W_next);

    for (const EnergySample& row : res.ledger)
      out.ledger.append(row.time, row.kinetic, row.potential, row.cumulative_dissipation, E0);
    dissipated += res.dissipated;
    out.halvings += res.halvings;
    out.rhs_evaluations += res.rhs_evaluations;
    ++out.windows;

    const WindowState& end = res.states.back();
    const BubbleConfig prescribed_end = problem.at(t_k + params.h);

    sample.time = end.time;
    sample.prescribed_radii = prescribed_end.radii;
    sample.prescribed_centers = prescribed_end.centers;
    sample.accumulated_radii = end.accumulated_radii;
    sample.accumulated_centers = end.accumulated_centers;
    sample.coefficients = end.coefficients;
    out.samples.push_back(sample);
    out.stop_time = end.time;

    // Next window: prescribed rates are this window's average accumulator
    // rates; the prescribed state advances continuously.
    for (int i = 0; i < N; ++i) {
      problem.radius_rates[i] =
          (end.accumulated_radii[i] - problem.initial_accumulated_radii[i]) / params.h;
      problem.center_rates[i] =
          (end.accumulated_centers[i] - problem.initial_accumulated_centers[i]) / params.h;
    }
    problem.base = prescribed_end;
    problem.initial_coefficients = end.coefficients;
    problem.initial_accumulated_radii = end.accumulated_radii;
    problem.initial_accumulated_centers = end.accumulated_centers;
    problem.dissipated_before = dissipated;
  }
  return out;
}

}  // namespace bubbleflow
