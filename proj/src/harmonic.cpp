#include "bubbleflow/harmonic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "bubbleflow/kernels.hpp"
#include "bubbleflow/quadrature.hpp"

namespace bubbleflow {

using kernels::coeff_count;
using kernels::coeff_index;
using kernels::dot;
using kernels::eval_expansion;
using kernels::kMaxDegree;

namespace {

// Quadrature nodes of one sphere in SoA form. Weights are the unit-sphere
// weights (sum 4*pi); integrating dS needs an extra r^2.
struct SurfaceGrid {
  std::size_t size = 0;
  std::vector<double> px, py, pz;  // world coordinates
  std::vector<double> nx, ny, nz;  // outward unit normals
  std::vector<double> w;
};

SurfaceGrid make_surface(const SphereRule& rule, const Vec3& c, double r) {
  SurfaceGrid g;
  g.size = rule.nodes.size();
  g.px.resize(g.size);
  g.py.resize(g.size);
  g.pz.resize(g.size);
  g.nx.resize(g.size);
  g.ny.resize(g.size);
  g.nz.resize(g.size);
  g.w = rule.weights;
  for (std::size_t k = 0; k < g.size; ++k) {
    const Vec3& d = rule.nodes[k];
    g.nx[k] = d.x();
    g.ny[k] = d.y();
    g.nz[k] = d.z();
    g.px[k] = c.x() + r * d.x();
    g.py[k] = c.y() + r * d.y();
    g.pz[k] = c.z() + r * d.z();
  }
  return g;
}

// Schmidt semi-normalized angular basis values at a unit direction
// (dx,dy,dz), same packing and scaling conventions as kernels.hpp with the
// radial factor dropped (rho = 1). out must hold coeff_count(L) entries.
void angular_values(int L, double dx, double dy, double dz, double* out) {
  const int nm = L + 1;
  std::vector<double> C(nm), S(nm), W((L + 1) * (L + 2) / 2);
  auto tri = [](int l, int m) { return l * (l + 1) / 2 + m; };
  C[0] = 1.0;
  S[0] = 0.0;
  for (int m = 1; m <= L; ++m) {
    C[m] = dx * C[m - 1] - dy * S[m - 1];
    S[m] = dx * S[m - 1] + dy * C[m - 1];
  }
  W[tri(0, 0)] = 1.0;
  for (int m = 1; m <= L; ++m) {
    W[tri(m, m)] = (m == 1) ? 1.0 : std::sqrt((2.0 * m - 1.0) / (2.0 * m)) * W[tri(m - 1, m - 1)];
  }
  for (int m = 0; m + 1 <= L; ++m) {
    W[tri(m + 1, m)] = std::sqrt(2.0 * m + 1.0) * dz * W[tri(m, m)];
  }
  for (int m = 0; m <= L; ++m) {
    for (int l = m + 2; l <= L; ++l) {
      const double den = std::sqrt(double(l) * l - double(m) * m);
      const double c1 = (2.0 * l - 1.0) / den;
      const double c2 = std::sqrt(double(l - 1) * (l - 1) - double(m) * m) / den;
      W[tri(l, m)] = c1 * dz * W[tri(l - 1, m)] - c2 * W[tri(l - 2, m)];
    }
  }
  for (int l = 0; l <= L; ++l) {
    out[coeff_index(l, 0, false)] = W[tri(l, 0)];
    for (int m = 1; m <= l; ++m) {
      out[coeff_index(l, m, false)] = W[tri(l, m)] * C[m];
      out[coeff_index(l, m, true)] = W[tri(l, m)] * S[m];
    }
  }
}

// Accumulate value/gradient of a whole field (all expansions) at SoA points.
void eval_field(const HarmonicField& field, const double* px, const double* py, const double* pz,
                std::size_t n, double* phi, double* gx, double* gy, double* gz) {
  for (const Expansion& e : field.expansions) {
    const double c[3] = {e.center.x(), e.center.y(), e.center.z()};
    eval_expansion(e.coeffs.data(), field.degree, c, e.scale, px, py, pz, n, phi, gx, gy, gz);
  }
}

double target_normal_data(const FieldLabel& label, int sphere, double nx, double ny, double nz) {
  if (label.bubble != sphere) return 0.0;
  if (!label.dipole) return 1.0;
  return label.axis == 0 ? nx : (label.axis == 1 ? ny : nz);
}

std::vector<FieldLabel> make_labels(int n) {
  std::vector<FieldLabel> labels;
  labels.reserve(4 * n);
  for (int i = 0; i < n; ++i) labels.push_back({false, i, 0});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) labels.push_back({true, i, k});
  return labels;
}

void format_double(char* buf, std::size_t cap, double v) { std::snprintf(buf, cap, "%.17g", v); }

}  // namespace

double evaluate_potential(const HarmonicField& field, const Vec3& x) {
  double phi = 0.0, gx = 0.0, gy = 0.0, gz = 0.0;
  const double px = x.x(), py = x.y(), pz = x.z();
  eval_field(field, &px, &py, &pz, 1, &phi, &gx, &gy, &gz);
  return phi;
}

Vec3 evaluate_gradient(const HarmonicField& field, const Vec3& x) {
  double gx = 0.0, gy = 0.0, gz = 0.0;
  const double px = x.x(), py = x.y(), pz = x.z();
  eval_field(field, &px, &py, &pz, 1, nullptr, &gx, &gy, &gz);
  return Vec3(gx, gy, gz);
}

HarmonicField single_sphere_monopole(const Vec3& center, double radius) {
  HarmonicField f;
  f.degree = 0;
  Expansion e;
  e.center = center;
  e.scale = radius;
  e.coeffs = Eigen::VectorXd::Zero(coeff_count(0));
  e.coeffs(coeff_index(0, 0, false)) = -radius;  // q = -r^2/|x-c|
  f.expansions.push_back(std::move(e));
  return f;
}

HarmonicField single_sphere_dipole(const Vec3& center, double radius, int axis) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("dipole axis must be 0, 1 or 2");
  HarmonicField f;
  f.degree = 1;
  Expansion e;
  e.center = center;
  e.scale = radius;
  e.coeffs = Eigen::VectorXd::Zero(coeff_count(1));
  // q = -(r^3/2) (x-c)_k / |x-c|^3; the degree-1 angular functions are
  // exactly the direction components (x: cos term m=1, y: sin term m=1, z: m=0).
  const int idx = (axis == 0)   ? coeff_index(1, 1, false)
                  : (axis == 1) ? coeff_index(1, 1, true)
                                : coeff_index(1, 0, false);
  e.coeffs(idx) = -0.5 * radius;
  f.expansions.push_back(std::move(e));
  return f;
}

HarmonicBasis solve_reflections(const BubbleConfig& config, const ReflectionParams& params,
                                const HarmonicBasis* warm_start) {
  config.validate();
  const AdmissibilityReport rep = validate_admissible(config);
  if (!rep.admissible)
    throw ConfigError("bubble closures intersect; the method of reflections needs disjoint bubbles");
  if (params.degree < 1 || params.degree > kMaxDegree)
    throw std::invalid_argument("reflection degree out of range");
  const int n = config.count();
  const int L = params.degree;
  const int nc = coeff_count(L);
  const int nfields = 4 * n;
  const int proj_degree = params.projection_degree > 0 ? params.projection_degree : 2 * L + 6;

  HarmonicBasis basis;
  basis.config = config;
  basis.degree = L;
  basis.labels = make_labels(n);
  basis.fields.assign(nfields, HarmonicField{});
  for (int a = 0; a < nfields; ++a) {
    basis.fields[a].degree = L;
    basis.fields[a].expansions.resize(n);
    for (int j = 0; j < n; ++j) {
      Expansion& e = basis.fields[a].expansions[j];
      e.center = config.centers[j];
      e.scale = config.radii[j];
      e.coeffs = Eigen::VectorXd::Zero(nc);
    }
  }
  if (warm_start) {
    if (warm_start->count() != nfields || warm_start->degree != L)
      throw std::invalid_argument("warm start basis has mismatched size or degree");
    for (int a = 0; a < nfields; ++a)
      for (int j = 0; j < n; ++j)
        basis.fields[a].expansions[j].coeffs = warm_start->fields[a].expansions[j].coeffs;
  }

  const SphereRule rule = make_sphere_rule(proj_degree);
  const std::size_t nn = rule.nodes.size();
  // Angular basis values at the rule directions (shared by all spheres).
  Eigen::MatrixXd yang(nn, nc);
  for (std::size_t k = 0; k < nn; ++k) {
    const Vec3& d = rule.nodes[k];
    std::vector<double> row(nc);
    angular_values(L, d.x(), d.y(), d.z(), row.data());
    for (int c = 0; c < nc; ++c) yang(k, c) = row[c];
  }
  std::vector<SurfaceGrid> grids;
  grids.reserve(n);
  for (int j = 0; j < n; ++j)
    grids.push_back(make_surface(rule, config.centers[j], config.radii[j]));

  // l+1 divisor and (2l+1)/(4pi) projection factor per packed coefficient.
  std::vector<double> proj_factor(nc), solve_factor(nc);
  for (int l = 0; l <= L; ++l) {
    for (int m = 0; m <= l; ++m) {
      for (int s = 0; s < (m == 0 ? 1 : 2); ++s) {
        const int idx = coeff_index(l, m, s == 1);
        proj_factor[idx] = (2.0 * l + 1.0) / (4.0 * M_PI);
        solve_factor[idx] = 1.0 / (l + 1.0);
      }
    }
  }

  std::vector<double> gx(nn), gy(nn), gz(nn), res(nn);
  // corrections[a][j] accumulated during a sweep, applied afterwards (Jacobi).
  std::vector<std::vector<Eigen::VectorXd>> corrections(
      nfields, std::vector<Eigen::VectorXd>(n, Eigen::VectorXd::Zero(nc)));
  double prev_sup = std::numeric_limits<double>::infinity();

  for (int sweep = 0;; ++sweep) {
    std::vector<double> field_sup(nfields, 0.0);
    for (int a = 0; a < nfields; ++a) {
      for (int j = 0; j < n; ++j) {
        const SurfaceGrid& g = grids[j];
        std::fill(gx.begin(), gx.end(), 0.0);
        std::fill(gy.begin(), gy.end(), 0.0);
        std::fill(gz.begin(), gz.end(), 0.0);
        eval_field(basis.fields[a], g.px.data(), g.py.data(), g.pz.data(), nn, nullptr,
                   gx.data(), gy.data(), gz.data());
        double sup = 0.0;
        for (std::size_t k = 0; k < nn; ++k) {
          const double dn = gx[k] * g.nx[k] + gy[k] * g.ny[k] + gz[k] * g.nz[k];
          res[k] = target_normal_data(basis.labels[a], j, g.nx[k], g.ny[k], g.nz[k]) - dn;
          sup = std::max(sup, std::abs(res[k]));
        }
        field_sup[a] = std::max(field_sup[a], sup);
        // Project the mismatch onto the angular basis and solve the
        // single-sphere Neumann problem for the correction.
        Eigen::VectorXd& corr = corrections[a][j];
        for (int c = 0; c < nc; ++c) {
          double acc = 0.0;
          for (std::size_t k = 0; k < nn; ++k) acc += g.w[k] * res[k] * yang(k, c);
          corr(c) = -acc * proj_factor[c] * solve_factor[c] * config.radii[j];
        }
      }
    }
    basis.sweep_history.push_back(field_sup);
    const double sup_all = *std::max_element(field_sup.begin(), field_sup.end());
    if (params.fixed_sweeps > 0) {
      // Prescribed sweep count: no convergence or stall checks, so the
      // result depends smoothly on the configuration.
      if (sweep >= params.fixed_sweeps) {
        basis.residuals = field_sup;
        return basis;
      }
      for (int a = 0; a < nfields; ++a)
        for (int j = 0; j < n; ++j) basis.fields[a].expansions[j].coeffs += corrections[a][j];
      continue;
    }
    if (sup_all <= params.tolerance) {
      basis.residuals = field_sup;
      return basis;
    }
    if (sweep >= params.max_sweeps) {
      std::ostringstream msg;
      msg << "method of reflections did not reach tolerance " << params.tolerance << " in "
          << params.max_sweeps << " sweeps; last residual " << sup_all;
      throw NumericalError(msg.str());
    }
    if (sweep >= 1 && sup_all >= prev_sup) {
      std::ostringstream msg;
      msg << "method of reflections stalled at residual " << sup_all << " (previous sweep "
          << prev_sup << "); the expansion degree " << L
          << " cannot represent the requested tolerance for this separation - increase the "
             "degree or relax the tolerance";
      throw NumericalError(msg.str());
    }
    prev_sup = sup_all;
    for (int a = 0; a < nfields; ++a)
      for (int j = 0; j < n; ++j) basis.fields[a].expansions[j].coeffs += corrections[a][j];
  }
}

GramMatrix gram(const HarmonicBasis& basis, int quadrature_degree) {
  const int nfields = basis.count();
  const int n = basis.config.count();
  const int degree = quadrature_degree > 0 ? quadrature_degree : 2 * basis.degree + 6;
  const SphereRule rule = make_sphere_rule(degree);
  const std::size_t nn = rule.nodes.size();

  GramMatrix G = GramMatrix::Zero(nfields, nfields);
  std::vector<std::vector<double>> phi(nfields, std::vector<double>(nn));
  std::vector<std::vector<double>> gn(nfields, std::vector<double>(nn));
  std::vector<double> gx(nn), gy(nn), gz(nn), wphi(nn);
  for (int j = 0; j < n; ++j) {
    const SurfaceGrid g = make_surface(rule, basis.config.centers[j], basis.config.radii[j]);
    const double r2 = basis.config.radii[j] * basis.config.radii[j];
    for (int a = 0; a < nfields; ++a) {
      std::fill(phi[a].begin(), phi[a].end(), 0.0);
      std::fill(gx.begin(), gx.end(), 0.0);
      std::fill(gy.begin(), gy.end(), 0.0);
      std::fill(gz.begin(), gz.end(), 0.0);
      eval_field(basis.fields[a], g.px.data(), g.py.data(), g.pz.data(), nn, phi[a].data(),
                 gx.data(), gy.data(), gz.data());
      for (std::size_t k = 0; k < nn; ++k)
        gn[a][k] = gx[k] * g.nx[k] + gy[k] * g.ny[k] + gz[k] * g.nz[k];
    }
    // G_ab = -sum_j int_{S_j} q_a dq_b/dn dS (Green's identity on the
    // exterior domain; the boundary normal seen from the fluid is -n).
    for (int a = 0; a < nfields; ++a) {
      for (std::size_t k = 0; k < nn; ++k) wphi[k] = g.w[k] * r2 * phi[a][k];
      for (int b = 0; b < nfields; ++b) G(a, b) -= dot(wphi.data(), gn[b].data(), nn);
    }
  }

  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (G + G.transpose()));
  if (llt.info() != Eigen::Success)
    throw NumericalError(
        "gram matrix is not positive definite: basis fields are numerically dependent "
        "(spheres too close for the expansion degree)");
  return G;
}

Eigen::MatrixXd orthonormalize(const HarmonicBasis& basis, const GramMatrix& gram_matrix) {
  const int nfields = basis.count();
  if (gram_matrix.rows() != nfields || gram_matrix.cols() != nfields)
    throw std::invalid_argument("gram matrix size does not match basis");
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (gram_matrix + gram_matrix.transpose()));
  if (llt.info() != Eigen::Success)
    throw NumericalError("orthonormalization failed: gram matrix not positive definite");
  Eigen::MatrixXd Lmat = llt.matrixL();
  const double pivot_floor = 1e-10 * Lmat.diagonal().maxCoeff();
  for (int i = 0; i < nfields; ++i)
    if (Lmat(i, i) <= pivot_floor)
      throw NumericalError("orthonormalization pivot below threshold: degenerate basis");
  Eigen::MatrixXd T =
      Lmat.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(nfields, nfields));
  return T;
}

HarmonicField combine(const HarmonicBasis& basis, const Eigen::VectorXd& coeffs) {
  if (coeffs.size() != basis.count())
    throw std::invalid_argument("coefficient vector size does not match basis");
  HarmonicField out;
  out.degree = basis.degree;
  const int n = basis.config.count();
  out.expansions.resize(n);
  for (int j = 0; j < n; ++j) {
    Expansion& e = out.expansions[j];
    e.center = basis.config.centers[j];
    e.scale = basis.config.radii[j];
    e.coeffs = Eigen::VectorXd::Zero(coeff_count(basis.degree));
    for (int a = 0; a < basis.count(); ++a)
      e.coeffs += coeffs(a) * basis.fields[a].expansions[j].coeffs;
  }
  return out;
}

Vec3 evaluate(const HarmonicBasis& basis, const Eigen::VectorXd& coeffs, const Vec3& point) {
  for (int j = 0; j < basis.config.count(); ++j) {
    const double d = (point - basis.config.centers[j]).norm();
    if (d < basis.config.radii[j] * (1.0 - 1e-12)) {
      std::ostringstream msg;
      msg << "evaluation point (" << point.x() << ", " << point.y() << ", " << point.z()
          << ") lies inside bubble " << j;
      throw std::domain_error(msg.str());
    }
  }
  const HarmonicField u = combine(basis, coeffs);
  return evaluate_gradient(u, point);
}

LiouvilleSplit liouville_split(const std::function<Vec3(const Vec3&)>& velocity,
                               const HarmonicBasis& basis, const GramMatrix& gram_matrix,
                               int quadrature_degree) {
  const int nfields = basis.count();
  const int n = basis.config.count();
  const int degree = quadrature_degree > 0 ? quadrature_degree : 2 * basis.degree + 6;
  const SphereRule rule = make_sphere_rule(degree);
  const std::size_t nn = rule.nodes.size();

  Eigen::VectorXd b = Eigen::VectorXd::Zero(nfields);
  std::vector<SurfaceGrid> grids;
  std::vector<std::vector<double>> un_all(n, std::vector<double>(nn));
  std::vector<double> phi(nn), gx(nn), gy(nn), gz(nn), wun(nn);
  for (int j = 0; j < n; ++j) {
    grids.push_back(make_surface(rule, basis.config.centers[j], basis.config.radii[j]));
    const SurfaceGrid& g = grids.back();
    const double r2 = basis.config.radii[j] * basis.config.radii[j];
    for (std::size_t k = 0; k < nn; ++k) {
      const Vec3 u = velocity(Vec3(g.px[k], g.py[k], g.pz[k]));
      un_all[j][k] = u.x() * g.nx[k] + u.y() * g.ny[k] + u.z() * g.nz[k];
      wun[k] = g.w[k] * r2 * un_all[j][k];
    }
    // <u, grad q_a>_{L2} reduces to -sum_j int (u.n) q_a dS for
    // divergence-free u (normal pointing out of the bubbles).
    for (int a = 0; a < nfields; ++a) {
      std::fill(phi.begin(), phi.end(), 0.0);
      std::fill(gx.begin(), gx.end(), 0.0);
      std::fill(gy.begin(), gy.end(), 0.0);
      std::fill(gz.begin(), gz.end(), 0.0);
      eval_field(basis.fields[a], g.px.data(), g.py.data(), g.pz.data(), nn, phi.data(),
                 gx.data(), gy.data(), gz.data());
      b(a) -= dot(wun.data(), phi.data(), nn);
    }
  }

  LiouvilleSplit split;
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (gram_matrix + gram_matrix.transpose()));
  if (llt.info() != Eigen::Success)
    throw NumericalError("liouville split failed: gram matrix not positive definite");
  split.coefficients = llt.solve(b);

  const HarmonicField proj = combine(basis, split.coefficients);
  double rem = 0.0;
  for (int j = 0; j < n; ++j) {
    const SurfaceGrid& g = grids[j];
    std::fill(gx.begin(), gx.end(), 0.0);
    std::fill(gy.begin(), gy.end(), 0.0);
    std::fill(gz.begin(), gz.end(), 0.0);
    eval_field(proj, g.px.data(), g.py.data(), g.pz.data(), nn, nullptr, gx.data(), gy.data(),
               gz.data());
    for (std::size_t k = 0; k < nn; ++k) {
      const double pn = gx[k] * g.nx[k] + gy[k] * g.ny[k] + gz[k] * g.nz[k];
      rem = std::max(rem, std::abs(un_all[j][k] - pn));
    }
  }
  split.normal_remainder = rem;
  return split;
}

void dump_basis(const HarmonicBasis& basis, std::ostream& out) {
  char buf[64];
  auto put = [&](double v) {
    format_double(buf, sizeof buf, v);
    out << buf;
  };
  const int n = basis.config.count();
  out << "bubbleflow basis 1\n";
  out << "degree " << basis.degree << "\n";
  out << "bubbles " << n << "\n";
  out << "gamma ";
  put(basis.config.gamma);
  out << "\n";
  for (int j = 0; j < n; ++j) {
    out << "bubble " << j << " center";
    for (int k = 0; k < 3; ++k) {
      out << ' ';
      put(basis.config.centers[j](k));
    }
    out << " radius ";
    put(basis.config.radii[j]);
    out << " pressure ";
    put(basis.config.pressure_constants[j]);
    out << "\n";
  }
  out << "fields " << basis.count() << "\n";
  for (int a = 0; a < basis.count(); ++a) {
    const FieldLabel& lbl = basis.labels[a];
    out << "field " << a << (lbl.dipole ? " dipole " : " monopole ") << lbl.bubble;
    if (lbl.dipole) out << ' ' << lbl.axis;
    out << " residual ";
    put(a < static_cast<int>(basis.residuals.size()) ? basis.residuals[a] : 0.0);
    out << "\n";
    for (int j = 0; j < n; ++j) {
      const Eigen::VectorXd& c = basis.fields[a].expansions[j].coeffs;
      out << "expansion " << j << ' ' << c.size() << "\n";
      for (int l = 0; l <= basis.degree; ++l) {
        for (int m = 0; m <= l; ++m) {
          for (int s = 0; s < (m == 0 ? 1 : 2); ++s) {
            out << l << ' ' << m << ' ' << (s ? 's' : 'c') << ' ';
            put(c(coeff_index(l, m, s == 1)));
            out << "\n";
          }
        }
      }
    }
  }
  out << "end\n";
}

namespace {

[[noreturn]] void parse_fail(const std::string& what) {
  throw ConfigError("basis file parse error: " + what);
}

template <typename T>
T expect_value(std::istream& in, const char* what) {
  T v;
  if (!(in >> v)) parse_fail(std::string("expected ") + what);
  return v;
}

void expect_token(std::istream& in, const char* token) {
  std::string s;
  if (!(in >> s) || s != token) parse_fail(std::string("expected token '") + token + "'");
}

}  // namespace

HarmonicBasis load_basis(std::istream& in) {
  expect_token(in, "bubbleflow");
  expect_token(in, "basis");
  const int version = expect_value<int>(in, "format version");
  if (version != 1) parse_fail("unsupported format version");

  HarmonicBasis basis;
  expect_token(in, "degree");
  basis.degree = expect_value<int>(in, "degree");
  expect_token(in, "bubbles");
  const int n = expect_value<int>(in, "bubble count");
  if (n <= 0 || basis.degree < 0 || basis.degree > kMaxDegree) parse_fail("header out of range");
  expect_token(in, "gamma");
  basis.config.gamma = expect_value<double>(in, "gamma");
  basis.config.centers.resize(n);
  basis.config.radii.resize(n);
  basis.config.pressure_constants.resize(n);
  for (int j = 0; j < n; ++j) {
    expect_token(in, "bubble");
    if (expect_value<int>(in, "bubble index") != j) parse_fail("bubble index out of order");
    expect_token(in, "center");
    for (int k = 0; k < 3; ++k) basis.config.centers[j](k) = expect_value<double>(in, "center");
    expect_token(in, "radius");
    basis.config.radii[j] = expect_value<double>(in, "radius");
    expect_token(in, "pressure");
    basis.config.pressure_constants[j] = expect_value<double>(in, "pressure constant");
  }
  expect_token(in, "fields");
  const int nfields = expect_value<int>(in, "field count");
  if (nfields != 4 * n) parse_fail("field count must be 4x bubble count");
  const int nc = coeff_count(basis.degree);
  basis.fields.resize(nfields);
  basis.labels.resize(nfields);
  basis.residuals.resize(nfields);
  for (int a = 0; a < nfields; ++a) {
    expect_token(in, "field");
    if (expect_value<int>(in, "field index") != a) parse_fail("field index out of order");
    const std::string kind = expect_value<std::string>(in, "field kind");
    FieldLabel lbl;
    if (kind == "monopole") {
      lbl.dipole = false;
    } else if (kind == "dipole") {
      lbl.dipole = true;
    } else {
      parse_fail("unknown field kind '" + kind + "'");
    }
    lbl.bubble = expect_value<int>(in, "field bubble");
    if (lbl.bubble < 0 || lbl.bubble >= n) parse_fail("field bubble out of range");
    if (lbl.dipole) {
      lbl.axis = expect_value<int>(in, "field axis");
      if (lbl.axis < 0 || lbl.axis > 2) parse_fail("field axis out of range");
    }
    basis.labels[a] = lbl;
    expect_token(in, "residual");
    basis.residuals[a] = expect_value<double>(in, "residual");
    basis.fields[a].degree = basis.degree;
    basis.fields[a].expansions.resize(n);
    for (int j = 0; j < n; ++j) {
      expect_token(in, "expansion");
      if (expect_value<int>(in, "expansion index") != j) parse_fail("expansion index out of order");
      if (expect_value<int>(in, "coefficient count") != nc) parse_fail("coefficient count mismatch");
      Expansion& e = basis.fields[a].expansions[j];
      e.center = basis.config.centers[j];
      e.scale = basis.config.radii[j];
      e.coeffs = Eigen::VectorXd::Zero(nc);
      for (int row = 0; row < nc; ++row) {
        const int l = expect_value<int>(in, "coefficient degree");
        const int m = expect_value<int>(in, "coefficient order");
        const std::string cs = expect_value<std::string>(in, "coefficient kind");
        if (l < 0 || l > basis.degree || m < 0 || m > l || (cs != "c" && cs != "s") ||
            (m == 0 && cs == "s"))
          parse_fail("bad coefficient key");
        e.coeffs(coeff_index(l, m, cs == "s")) = expect_value<double>(in, "coefficient value");
      }
    }
  }
  expect_token(in, "end");
  basis.config.validate();
  return basis;
}

BasisTables eval_basis_tables(const HarmonicBasis& basis, const std::vector<Vec3>& points,
                              bool want_phi) {
  BasisTables t;
  t.n = points.size();
  std::vector<double> px(t.n), py(t.n), pz(t.n);
  for (std::size_t k = 0; k < t.n; ++k) {
    px[k] = points[k].x();
    py[k] = points[k].y();
    pz[k] = points[k].z();
  }
  const int nfields = basis.count();
  if (want_phi) t.phi.assign(nfields, std::vector<double>(t.n, 0.0));
  t.gx.assign(nfields, std::vector<double>(t.n, 0.0));
  t.gy.assign(nfields, std::vector<double>(t.n, 0.0));
  t.gz.assign(nfields, std::vector<double>(t.n, 0.0));
  for (int a = 0; a < nfields; ++a) {
    eval_field(basis.fields[a], px.data(), py.data(), pz.data(), t.n,
               want_phi ? t.phi[a].data() : nullptr, t.gx[a].data(), t.gy[a].data(),
               t.gz[a].data());
  }
  return t;
}

HessianTables eval_hessian_tables(const HarmonicBasis& basis, const std::vector<Vec3>& points,
                                  double step) {
  if (!(step > 0.0)) throw std::invalid_argument("hessian step must be positive");
  HessianTables t;
  t.n = points.size();
  const int nfields = basis.count();
  t.h.resize(nfields);
  for (auto& comp : t.h)
    for (auto& v : comp) v.assign(t.n, 0.0);

  // Shifted point sets: +/- step along each axis.
  std::array<std::vector<Vec3>, 6> shifted;
  for (int d = 0; d < 3; ++d) {
    shifted[2 * d].resize(t.n);
    shifted[2 * d + 1].resize(t.n);
    Vec3 dv = Vec3::Zero();
    dv(d) = step;
    for (std::size_t k = 0; k < t.n; ++k) {
      shifted[2 * d][k] = points[k] + dv;
      shifted[2 * d + 1][k] = points[k] - dv;
    }
  }
  std::array<BasisTables, 6> tab;
  for (int s = 0; s < 6; ++s) tab[s] = eval_basis_tables(basis, shifted[s], false);

  const double inv2h = 1.0 / (2.0 * step);
  for (int a = 0; a < nfields; ++a) {
    for (std::size_t k = 0; k < t.n; ++k) {
      // d(grad)/dx_d columns, then symmetrize the off-diagonal entries.
      const double dxx = (tab[0].gx[a][k] - tab[1].gx[a][k]) * inv2h;
      const double dyx = (tab[0].gy[a][k] - tab[1].gy[a][k]) * inv2h;
      const double dzx = (tab[0].gz[a][k] - tab[1].gz[a][k]) * inv2h;
      const double dxy = (tab[2].gx[a][k] - tab[3].gx[a][k]) * inv2h;
      const double dyy = (tab[2].gy[a][k] - tab[3].gy[a][k]) * inv2h;
      const double dzy = (tab[2].gz[a][k] - tab[3].gz[a][k]) * inv2h;
      const double dxz = (tab[4].gx[a][k] - tab[5].gx[a][k]) * inv2h;
      const double dyz = (tab[4].gy[a][k] - tab[5].gy[a][k]) * inv2h;
      const double dzz = (tab[4].gz[a][k] - tab[5].gz[a][k]) * inv2h;
      t.h[a][0][k] = dxx;
      t.h[a][1][k] = 0.5 * (dyx + dxy);
      t.h[a][2][k] = 0.5 * (dzx + dxz);
      t.h[a][3][k] = dyy;
      t.h[a][4][k] = 0.5 * (dzy + dyz);
      t.h[a][5][k] = dzz;
    }
  }
  return t;
}

}  // namespace bubbleflow
