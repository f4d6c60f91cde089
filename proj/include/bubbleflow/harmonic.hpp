#pragma once

// The dilation velocity space outside N spheres: for each bubble a potential
// with unit normal derivative on its own sphere (monopole field, u.n = 1) and
// three with normal derivative n_k (dipole fields, u.n = n_k), all with zero
// normal derivative on every other sphere. Gradients of these 4N potentials
// span the space of admissible dilation/translation velocities; this module
// constructs them by the method of reflections, together with their Gram
// matrix, an orthonormalizing change of basis, and the projection (Liouville
// split) of sampled velocity fields onto the span.
//
// Normal convention: n always points out of the bubble, into the fluid, so a
// pure radial expansion has u.n = rdot on its interface. (Some references
// write the radial model field with the opposite sign/normalization; here the
// field is fixed by the boundary condition u.n = rdot.)

#include <functional>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "bubbleflow/geometry.hpp"

namespace bubbleflow {

// A single truncated solid-harmonic expansion (see kernels.hpp for the
// packing and normalization of the coefficient vector).
struct Expansion {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;  // length unit of the expansion (the bubble radius)
  Eigen::VectorXd coeffs;
};

// A harmonic potential represented as one expansion per bubble. The
// represented potential decays at infinity (no constant term is stored), and
// its gradient decays at least like |x|^-2.
struct HarmonicField {
  int degree = 0;
  std::vector<Expansion> expansions;
};

double evaluate_potential(const HarmonicField& field, const Vec3& x);
Vec3 evaluate_gradient(const HarmonicField& field, const Vec3& x);

// Closed forms for a single sphere: q = -r^2/|x-c| (monopole) and
// q = -(r^3/2) (x-c)_k/|x-c|^3 (dipole along axis k in {0,1,2}).
HarmonicField single_sphere_monopole(const Vec3& center, double radius);
HarmonicField single_sphere_dipole(const Vec3& center, double radius, int axis);

struct FieldLabel {
  bool dipole = false;
  int bubble = 0;
  int axis = 0;  // 0..2, dipole only
};

// The 4N-field basis, ordered monopoles first (q_1..q_N), then dipoles
// bubble-major (q_1^1, q_1^2, q_1^3, q_2^1, ...).
struct HarmonicBasis {
  BubbleConfig config;
  int degree = 0;
  std::vector<HarmonicField> fields;
  std::vector<FieldLabel> labels;
  // Sup-norm Neumann mismatch per field after construction.
  std::vector<double> residuals;
  // sweep_history[s][a]: sup-norm residual of field a before correction
  // sweep s (entry 0 is the raw target, i.e. 1).
  std::vector<std::vector<double>> sweep_history;

  int count() const { return static_cast<int>(fields.size()); }
};

inline int monopole_index(int bubble) { return bubble; }
inline int dipole_index(int n_bubbles, int bubble, int axis) {
  return n_bubbles + 3 * bubble + axis;
}

// degree and tolerance must be mutually reachable: the sup-norm residual
// plateaus at the angular truncation floor, empirically ~2 (r/d)^(L+1) for
// the closest pair at center distance d. The defaults clear that floor with
// a few-x margin down to gap ~ 3r; tighter gaps need a higher degree or a
// looser tolerance.
struct ReflectionParams {
  int degree = 12;          // expansion order L
  double tolerance = 1e-8;  // sup-norm residual target
  int max_sweeps = 64;
  int projection_degree = 0;  // sphere-rule degree for residual projection; 0 -> 2L+6
  // When positive, run exactly this many sweeps with no convergence or stall
  // checks (tolerance is ignored).  This makes the result a smooth
  // deterministic function of the configuration, which finite-difference
  // shape derivatives need: an adaptive stopping rule makes the truncation
  // error jump wherever the sweep count changes.
  int fixed_sweeps = 0;
};

// Jacobi-style reflections: every sweep computes all residuals from the same
// iterate, then corrects every sphere simultaneously. Throws NumericalError
// (carrying the last residual) if the target tolerance is not reached within
// max_sweeps or the iteration stalls. `warm_start` (same bubble count and
// degree) seeds the coefficients, e.g. for finite-difference re-solves under
// small geometry perturbations.
HarmonicBasis solve_reflections(const BubbleConfig& config, const ReflectionParams& params,
                                const HarmonicBasis* warm_start = nullptr);

using GramMatrix = Eigen::MatrixXd;

// L2(exterior) inner products of the basis gradients, assembled by boundary
// reduction: G_ab = -sum_j surface_int(q_a * dq_b/dn) over every sphere, with
// the analytic Neumann trace of the represented field b (no volume
// quadrature). Green's identity makes this symmetric up to quadrature
// aliasing. quadrature_degree 0 picks 2L+6. Throws NumericalError if the
// result is not positive definite (near-touching config or degree too small).
GramMatrix gram(const HarmonicBasis& basis, int quadrature_degree = 0);

// Lower-triangular T with T G T^T = I (Gram-Schmidt in the basis ordering).
// Throws NumericalError when a pivot drops below threshold (degenerate/
// nearly dependent basis).
Eigen::MatrixXd orthonormalize(const HarmonicBasis& basis, const GramMatrix& gram);

// Sums the per-bubble expansions of all fields weighted by `coeffs` into a
// single field representing u = sum_a coeffs_a grad q_a.
HarmonicField combine(const HarmonicBasis& basis, const Eigen::VectorXd& coeffs);

// u(x) = sum_a coeffs_a grad q_a (x). Throws std::domain_error if the point
// lies inside a bubble.
Vec3 evaluate(const HarmonicBasis& basis, const Eigen::VectorXd& coeffs, const Vec3& point);

struct LiouvilleSplit {
  Eigen::VectorXd coefficients;  // best-approximation coefficients in the span
  // Sup-norm over sphere nodes of the residual normal trace
  // (u - u_split).n; zero exactly when u.n lies in the span of the basis
  // normal traces (the dilation part captures all of u.n).
  double normal_remainder = 0.0;
};

// Projects a velocity field sampled on the bubble surfaces onto the basis:
// solves G c = b with b_a = -sum_j surface_int (u.n) q_a dS (the L2 pairing
// of u with grad q_a reduced to the boundary).
LiouvilleSplit liouville_split(const std::function<Vec3(const Vec3&)>& velocity,
                               const HarmonicBasis& basis, const GramMatrix& gram_matrix,
                               int quadrature_degree = 0);

// Structured-text serialization; reload reproduces every coefficient bit for
// bit (decimal round-trip).
void dump_basis(const HarmonicBasis& basis, std::ostream& out);
HarmonicBasis load_basis(std::istream& in);

// --- batched evaluation helpers used by the assembly layers ---------------

// Per-field values/gradients at a common point set ([field][point], SoA).
struct BasisTables {
  std::size_t n = 0;
  std::vector<std::vector<double>> phi;  // empty when not requested
  std::vector<std::vector<double>> gx, gy, gz;
};
BasisTables eval_basis_tables(const HarmonicBasis& basis, const std::vector<Vec3>& points,
                              bool want_phi);

// Second derivatives of each potential (xx, xy, xz, yy, yz, zz per field) by
// central differences of the analytic gradient.
struct HessianTables {
  std::size_t n = 0;
  std::vector<std::array<std::vector<double>, 6>> h;  // [field][component][point]
};
HessianTables eval_hessian_tables(const HarmonicBasis& basis, const std::vector<Vec3>& points,
                                  double step);

}  // namespace bubbleflow
