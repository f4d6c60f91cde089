#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"

#include "bubbleflow/energy.hpp"
#include "bubbleflow/harmonic.hpp"

using namespace bubbleflow;

namespace {

BubbleConfig one_bubble(double r = 1.0) {
  BubbleConfig cfg;
  cfg.centers = {Vec3::Zero()};
  cfg.radii = {r};
  cfg.pressure_constants = {4.0 * M_PI};
  cfg.gamma = 5.0 / 3.0;
  return cfg;
}

}  // namespace

TEST_SUITE("energy") {

TEST_CASE("pressure law values and the collapse guard") {
  CHECK(bubble_pressure(1.0, 4.0 * M_PI, 5.0 / 3.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(bubble_pressure(0.5, 4.0 * M_PI, 2.0) == doctest::Approx(64.0).epsilon(1e-14));
  CHECK(bubble_pressure(3.7, 0.0, 1.4) == 0.0);
  CHECK_THROWS_AS(bubble_pressure(0.0, 4.0 * M_PI, 5.0 / 3.0), NumericalError);
  CHECK_THROWS_AS(bubble_pressure(-0.2, 4.0 * M_PI, 5.0 / 3.0), NumericalError);
}

TEST_CASE("potential energy: reference value, decay, additivity") {
  CHECK(potential_energy({1.0}, {4.0 * M_PI}, 5.0 / 3.0) ==
        doctest::Approx(2.0 * M_PI).epsilon(1e-15));
  // 3 - 3 gamma < 0: the potential vanishes as the bubble grows.
  CHECK(potential_energy({1e8}, {4.0 * M_PI}, 5.0 / 3.0) < 1e-10);
  const double apart = potential_energy({1.0}, {2.0}, 1.8) + potential_energy({0.7}, {3.0}, 1.8);
  CHECK(potential_energy({1.0, 0.7}, {2.0, 3.0}, 1.8) == doctest::Approx(apart).epsilon(1e-15));
  CHECK_THROWS_AS(potential_energy({1.0, -1.0}, {1.0, 1.0}, 1.5), NumericalError);
  CHECK_THROWS_AS(potential_energy({1.0}, {1.0, 2.0}, 1.5), std::invalid_argument);
}

TEST_CASE("radius derivative of the potential balances the pressure forcing") {
  // d/dr E_p(r) = -4 pi r^2 p(r), checked by central differences; the error
  // must shrink like h^2.
  const double c = 7.3, gamma = 1.62, r = 0.9;
  const double target = -4.0 * M_PI * r * r * bubble_pressure(r, c, gamma);
  double prev_err = 0.0;
  for (int k = 0; k < 5; ++k) {
    const double h = 1e-2 / std::pow(4.0, k);
    const double fd =
        (potential_energy({r + h}, {c}, gamma) - potential_energy({r - h}, {c}, gamma)) /
        (2.0 * h);
    const double err = std::abs(fd - target);
    if (k > 0) CHECK(err <= prev_err / 12.0);  // 4^2 = 16 with slack
    prev_err = err;
  }
  CHECK(prev_err <= 1e-8 * std::abs(target));
}

TEST_CASE("kinetic energy: quadratic form values") {
  Eigen::MatrixXd G = Eigen::MatrixXd::Identity(4, 4);
  CHECK(kinetic_energy(Eigen::VectorXd::Zero(4), G) == 0.0);

  ReflectionParams params;
  params.degree = 6;
  const HarmonicBasis basis = solve_reflections(one_bubble(), params);
  const GramMatrix gram1 = gram(basis);
  Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(4);
  const double rdot = 0.83;
  coeffs(0) = rdot;
  CHECK(kinetic_energy(coeffs, gram1) ==
        doctest::Approx(2.0 * M_PI * rdot * rdot).epsilon(1e-12));

  const double r = 1.6;
  const HarmonicBasis scaled = solve_reflections(one_bubble(r), params);
  CHECK(kinetic_energy(coeffs, gram(scaled)) ==
        doctest::Approx(2.0 * M_PI * rdot * rdot * r * r * r).epsilon(1e-12));

  CHECK_THROWS_AS(kinetic_energy(Eigen::VectorXd::Zero(3), gram1), std::invalid_argument);
}

TEST_CASE("kinetic energy is invariant under the orthonormal change of basis") {
  BubbleConfig cfg;
  cfg.centers = {Vec3(-2.5, 0.0, 0.0), Vec3(2.5, 0.0, 0.0)};
  cfg.radii = {1.0, 1.0};
  cfg.pressure_constants = {10.0, 10.0};
  cfg.gamma = 5.0 / 3.0;
  ReflectionParams params;
  params.degree = 8;
  params.tolerance = 1e-5;
  const HarmonicBasis basis = solve_reflections(cfg, params);
  const GramMatrix G = gram(basis);
  const Eigen::MatrixXd T = orthonormalize(basis, G);

  Eigen::VectorXd c(8);
  c << 0.4, -0.7, 0.2, 0.9, -0.3, 0.5, 0.1, -0.6;
  // Same velocity field in orthonormal coordinates: c' = T^-T c, metric I.
  const Eigen::VectorXd cprime =
      T.transpose().triangularView<Eigen::Upper>().solve(c);
  const double ek = kinetic_energy(c, G);
  const double ek_ortho = 0.5 * cprime.squaredNorm();
  CHECK(std::abs(ek - ek_ortho) <= 1e-10 * std::max(1.0, ek));
}

TEST_CASE("full-model pressure constant converts to the relaxed convention") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> cd(0.5, 20.0), gd(1.1, 2.4), rd(0.3, 3.0);
  for (int i = 0; i < 25; ++i) {
    const double c_hat = cd(rng), gamma = gd(rng), r = rd(rng);
    const double volume = 4.0 * M_PI / 3.0 * r * r * r;
    const double p_full = c_hat * std::pow(volume, -gamma);
    const double p_relaxed = bubble_pressure(r, relaxed_pressure_constant(c_hat, gamma), gamma);
    CHECK(p_relaxed == doctest::Approx(p_full).epsilon(1e-12));
  }
}

TEST_CASE("cutoff profile: boundary values, reference point, domain guard") {
  const BubbleConfig cfg = one_bubble();
  const double delta = 1.0;
  CHECK(phi_delta(0, cfg, delta, Vec3(1.0, 0.0, 0.0)) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(phi_delta(0, cfg, delta, Vec3(0.0, 2.0, 0.0)) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(phi_delta(0, cfg, delta, Vec3(4.0 / 3.0, 0.0, 0.0)) ==
        doctest::Approx(0.5).epsilon(1e-14));
  // Monotone decreasing across the shell.
  double prev = 1.0;
  for (int k = 1; k <= 20; ++k) {
    const double rho = 1.0 + k / 20.0;
    const double v = phi_delta(0, cfg, delta, Vec3(rho, 0.0, 0.0));
    CHECK(v < prev);
    prev = v;
  }
  CHECK_THROWS_AS(phi_delta(0, cfg, delta, Vec3(0.5, 0.0, 0.0)), std::domain_error);
  CHECK_THROWS_AS(phi_delta(0, cfg, delta, Vec3(2.5, 0.0, 0.0)), std::domain_error);
  CHECK_THROWS_AS(phi_delta(1, cfg, delta, Vec3(1.5, 0.0, 0.0)), std::invalid_argument);
}

TEST_CASE("a-priori velocity bounds: reference value and wide-cutoff limit") {
  const BubbleConfig cfg = one_bubble();
  const VelocityBounds b = apriori_velocity_bounds(2.0 * M_PI, 1.0, cfg);
  REQUIRE(b.radial.size() == 1);
  CHECK(b.radial[0] == doctest::Approx(1.0 / std::sqrt(M_PI)).epsilon(1e-14));
  CHECK(b.center[0] == doctest::Approx(kCenterBoundCalibration / std::sqrt(M_PI)).epsilon(1e-14));

  // 1/delta -> 0 leaves sqrt(2 E0) / (4 pi r^3) (times r/r).
  const double E0 = 3.7, r = 1.4;
  const VelocityBounds wide = apriori_velocity_bounds(E0, 1e12, one_bubble(r));
  CHECK(wide.radial[0] ==
        doctest::Approx(std::sqrt(2.0 * E0) / (4.0 * M_PI * r * r * r)).epsilon(1e-9));

  CHECK_THROWS_AS(apriori_velocity_bounds(-1.0, 1.0, cfg), std::invalid_argument);
  CHECK_THROWS_AS(apriori_velocity_bounds(1.0, 0.0, cfg), std::invalid_argument);
}

TEST_CASE("ledger: slack accounting and the dissipation monotonicity guard") {
  EnergyLedger ledger;
  const double E0 = 5.0;
  ledger.append(0.0, 1.0, 3.0, 0.0, E0);
  ledger.append(0.1, 0.8, 3.1, 0.05, E0);
  CHECK(ledger.samples[0].slack == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ledger.samples[1].slack == doctest::Approx(5.0 - 3.95).epsilon(1e-13));
  CHECK_THROWS_AS(ledger.append(0.2, 0.8, 3.0, 0.01, E0), NumericalError);
  CHECK_THROWS_AS(
      ledger.append(0.2, 0.8, std::numeric_limits<double>::infinity(), 0.06, E0),
      NumericalError);
}

TEST_CASE("inequality check flags exactly the injected violation") {
  EnergyLedger ledger;
  const double E0 = 5.0;
  ledger.append(0.0, 1.0, 3.0, 0.0, E0);
  ledger.append(0.1, 1.0, 3.2, 0.1, E0);
  ledger.append(0.2, 2.0, 3.2, 0.2, E0);  // lhs = 5.4: violation 0.4
  ledger.append(0.3, 1.0, 3.0, 0.2, E0);

  const EnergyCheck check = check_energy_inequality(ledger, E0, 1e-6);
  CHECK_FALSE(check.satisfied);
  REQUIRE(check.flagged.size() == 1);
  CHECK(check.flagged[0] == 2);
  CHECK(check.worst_index == 2);
  CHECK(check.max_violation == doctest::Approx(0.4).epsilon(1e-12));

  // Loose tolerance accepts the same ledger.
  CHECK(check_energy_inequality(ledger, E0, 0.5).satisfied);
  CHECK_THROWS_AS(check_energy_inequality(EnergyLedger{}, E0, 1e-6), ConfigError);
}

TEST_CASE("csv export is headered and decimal-exact") {
  EnergyLedger ledger;
  const double kin = 0.1 + 0.2;  // not representable: exercises the 17-digit path
  ledger.append(1.0 / 3.0, kin, 2.0 * M_PI, 1e-17, 7.0);
  std::ostringstream out;
  write_energy_csv(ledger, out);

  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  CHECK(header == "time,kinetic,potential,dissipation,slack");
  std::getline(in, row);
  std::istringstream cells(row);
  std::string cell;
  std::getline(cells, cell, ',');
  CHECK(std::stod(cell) == 1.0 / 3.0);
  std::getline(cells, cell, ',');
  CHECK(std::stod(cell) == kin);
  std::getline(cells, cell, ',');
  CHECK(std::stod(cell) == 2.0 * M_PI);
  std::getline(cells, cell, ',');
  CHECK(std::stod(cell) == 1e-17);
  std::getline(cells, cell, ',');
  CHECK(std::stod(cell) == ledger.samples[0].slack);
}

}  // TEST_SUITE
