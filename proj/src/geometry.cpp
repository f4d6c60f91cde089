#include "bubbleflow/geometry.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace bubbleflow {

void BubbleConfig::validate() const {
  std::ostringstream problems;
  auto complain = [&](const std::string& msg) {
    if (problems.tellp() > 0) problems << "; ";
    problems << msg;
  };

  const std::size_t n = centers.size();
  if (n == 0) complain("config must contain at least one bubble");
  if (radii.size() != n)
    complain("radii size " + std::to_string(radii.size()) +
             " does not match centers size " + std::to_string(n));
  if (pressure_constants.size() != n)
    complain("pressure_constants size " + std::to_string(pressure_constants.size()) +
             " does not match centers size " + std::to_string(n));
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (!centers[i].allFinite())
      complain("centers[" + std::to_string(i) + "] is not finite");
  }
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] > 0.0) || !std::isfinite(radii[i]))
      complain("radii[" + std::to_string(i) + "] must be positive and finite, got " +
               std::to_string(radii[i]));
  }
  for (std::size_t i = 0; i < pressure_constants.size(); ++i) {
    if (!(pressure_constants[i] > 0.0) || !std::isfinite(pressure_constants[i]))
      complain("pressure_constants[" + std::to_string(i) + "] must be positive, got " +
               std::to_string(pressure_constants[i]));
  }
  if (!(gamma > 1.0) || !std::isfinite(gamma))
    complain("gamma must be > 1, got " + std::to_string(gamma));

  if (problems.tellp() > 0) throw ConfigError(problems.str());
}

namespace {

double min_gap_of(const std::vector<Vec3>& centers, const std::vector<double>& radii) {
  const std::size_t n = centers.size();
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double gap = (centers[i] - centers[j]).norm() - radii[i] - radii[j];
      min_gap = std::min(min_gap, gap);
    }
  }
  return min_gap;
}

}  // namespace

AdmissibilityReport validate_admissible(const BubbleConfig& config) {
  config.validate();
  AdmissibilityReport report;
  if (config.count() == 1) {
    report.admissible = true;
    report.min_gap = std::numeric_limits<double>::infinity();
    report.delta = config.radii[0] / 2.0;
    return report;
  }
  report.min_gap = min_gap_of(config.centers, config.radii);
  report.admissible = report.min_gap > 0.0;
  report.delta = report.min_gap / 4.0;
  return report;
}

double hausdorff_distance(const Ball& a, const Ball& b) {
  if (!(a.radius > 0.0) || !(b.radius > 0.0))
    throw ConfigError("hausdorff_distance requires positive radii");
  return (a.center - b.center).norm() + std::abs(a.radius - b.radius);
}

std::optional<double> detect_collision(const std::vector<GeometrySample>& trajectory,
                                       double threshold) {
  if (trajectory.empty()) throw ConfigError("detect_collision: empty trajectory");
  if (trajectory.front().centers.size() <= 1) return std::nullopt;

  double prev_gap = min_gap_of(trajectory.front().centers, trajectory.front().radii);
  if (prev_gap <= threshold) return trajectory.front().t;

  for (std::size_t k = 1; k < trajectory.size(); ++k) {
    const double gap = min_gap_of(trajectory[k].centers, trajectory[k].radii);
    if (gap <= threshold) {
      const double t0 = trajectory[k - 1].t;
      const double t1 = trajectory[k].t;
      // Linear interpolation of the gap between the bracketing samples.
      const double frac = (prev_gap - threshold) / (prev_gap - gap);
      return t0 + frac * (t1 - t0);
    }
    prev_gap = gap;
  }
  return std::nullopt;
}

}  // namespace bubbleflow
