#include "bubbleflow/energy.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bubbleflow {

double bubble_pressure(double r, double pressure_constant, double gamma) {
  if (!(r > 0.0)) {
    std::ostringstream msg;
    msg << "bubble radius " << r << " collapsed: pressure law undefined for r <= 0";
    throw NumericalError(msg.str());
  }
  return pressure_constant / (4.0 * M_PI) * std::pow(r, -3.0 * gamma);
}

double potential_energy(const std::vector<double>& radii,
                        const std::vector<double>& pressure_constants, double gamma) {
  if (radii.size() != pressure_constants.size())
    throw std::invalid_argument("radii and pressure constants must have equal length");
  double sum = 0.0;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] > 0.0)) throw NumericalError("potential energy undefined for r <= 0");
    sum += pressure_constants[i] / (3.0 * gamma - 3.0) * std::pow(radii[i], 3.0 - 3.0 * gamma);
  }
  return sum;
}

double potential_energy(const BubbleConfig& config) {
  return potential_energy(config.radii, config.pressure_constants, config.gamma);
}

double kinetic_energy(const Eigen::VectorXd& coefficients, const Eigen::MatrixXd& gram) {
  if (gram.rows() != gram.cols() || coefficients.size() != gram.rows())
    throw std::invalid_argument("coefficient/gram dimension mismatch");
  return 0.5 * coefficients.dot(gram * coefficients);
}

double relaxed_pressure_constant(double c_hat, double gamma) {
  return 4.0 * M_PI * std::pow(4.0 * M_PI / 3.0, -gamma) * c_hat;
}

double phi_delta(int i, const BubbleConfig& config, double delta, const Vec3& x) {
  if (i < 0 || i >= config.count()) throw std::invalid_argument("bubble index out of range");
  if (!(delta > 0.0)) throw std::invalid_argument("cutoff width must be positive");
  const double r = config.radii[i];
  const double rho = (x - config.centers[i]).norm();
  const double slack = 1e-12 * (r + delta);
  if (rho < r - slack || rho > r + delta + slack) {
    std::ostringstream msg;
    msg << "point at distance " << rho << " from bubble " << i
        << " lies outside the cutoff shell [" << r << ", " << r + delta << "]";
    throw std::domain_error(msg.str());
  }
  return (delta + r) * r / delta / rho - r / delta;
}

VelocityBounds apriori_velocity_bounds(double E0, double delta, const BubbleConfig& config) {
  if (!(E0 > 0.0)) throw std::invalid_argument("energy budget must be positive");
  if (!(delta > 0.0)) throw std::invalid_argument("cutoff width must be positive");
  VelocityBounds bounds;
  const double root = std::sqrt(2.0 * E0);
  for (int i = 0; i < config.count(); ++i) {
    const double r = config.radii[i];
    const double base = root * (1.0 / delta + 1.0 / r) / (4.0 * M_PI * r * r);
    bounds.radial.push_back(base);
    bounds.center.push_back(kCenterBoundCalibration * base);
  }
  return bounds;
}

void EnergyLedger::append(double time, double kinetic, double potential,
                          double cumulative_dissipation, double E0) {
  if (!std::isfinite(potential))
    throw NumericalError("potential energy is not finite (radius collapsing?)");
  if (!samples.empty()) {
    const double prev = samples.back().cumulative_dissipation;
    const double slack_tol = 1e-12 * std::max(1.0, std::abs(prev));
    if (cumulative_dissipation < prev - slack_tol)
      throw NumericalError("cumulative dissipation decreased between ledger samples");
  }
  EnergySample s;
  s.time = time;
  s.kinetic = kinetic;
  s.potential = potential;
  s.cumulative_dissipation = cumulative_dissipation;
  s.slack = E0 - (kinetic + potential + cumulative_dissipation);
  samples.push_back(s);
}

EnergyCheck check_energy_inequality(const EnergyLedger& ledger, double E0, double tol) {
  if (ledger.samples.empty()) throw ConfigError("energy ledger is empty");
  EnergyCheck check;
  for (std::size_t k = 0; k < ledger.samples.size(); ++k) {
    const EnergySample& s = ledger.samples[k];
    const double lhs = s.kinetic + s.potential + s.cumulative_dissipation;
    const double violation = lhs - E0;
    if (violation > check.max_violation) {
      check.max_violation = violation;
      check.worst_index = static_cast<std::ptrdiff_t>(k);
    }
    if (violation > tol) {
      check.flagged.push_back(k);
      check.satisfied = false;
    }
  }
  return check;
}

void write_energy_csv(const EnergyLedger& ledger, std::ostream& out) {
  out << "time,kinetic,potential,dissipation,slack\n";
  char buf[160];
  for (const EnergySample& s : ledger.samples) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", s.time, s.kinetic,
                  s.potential, s.cumulative_dissipation, s.slack);
    out << buf;
  }
}

}  // namespace bubbleflow
