#pragma once

// Bubble configuration state: admissibility, separation margin, collision
// detection, Hausdorff distance between balls.

#include <Eigen/Core>

#include <optional>
#include <stdexcept>
#include <vector>

namespace bubbleflow {

using Vec3 = Eigen::Vector3d;

// Thrown when a configuration violates its invariants (nonpositive radius,
// non-finite center, gamma <= 1, ...). The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown on numerical failure (collapse, reflection stall, non-finite
// values). The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// State of N spherical bubbles immersed in the fluid: centers x_i, radii r_i,
// per-bubble pressure constants c_i (p_i(r) = c_i/(4pi) * r^(-3*gamma)) and a
// common adiabatic exponent gamma > 1.
struct BubbleConfig {
  std::vector<Vec3> centers;
  std::vector<double> radii;
  std::vector<double> pressure_constants;
  double gamma = 5.0 / 3.0;

  int count() const { return static_cast<int>(centers.size()); }

  // Throws ConfigError (message lists every violation) if invariants fail:
  // N >= 1, sizes consistent, radii > 0, c_i > 0, gamma > 1, centers finite.
  void validate() const;
};

struct AdmissibilityReport {
  bool admissible = false;
  double min_gap = 0.0;  // inf over pairs of |x_i - x_j| - r_i - r_j
  double delta = 0.0;    // min_gap / 4 for N >= 2, r_1 / 2 for N = 1
};

// Checks pairwise separation. For N = 1 there are no pairs; we report
// min_gap = +inf, admissible = true, and delta = r_1/2 so that downstream
// cutoff widths stay finite.
AdmissibilityReport validate_admissible(const BubbleConfig& config);

struct Ball {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

// Hausdorff distance between two closed balls: |c_a - c_b| + |r_a - r_b|.
double hausdorff_distance(const Ball& a, const Ball& b);

// One sample of a bubble trajectory, as produced by the integrators.
struct GeometrySample {
  double t = 0.0;
  std::vector<Vec3> centers;
  std::vector<double> radii;
};

// First time at which the pairwise gap drops to `threshold`, linearly
// interpolated between samples (trajectories are piecewise affine in the
// windowed scheme, so linear interpolation is the natural choice).
// Returns nullopt if the gap stays above threshold. Throws ConfigError on an
// empty trajectory. N = 1 trajectories never collide.
std::optional<double> detect_collision(const std::vector<GeometrySample>& trajectory,
                                       double threshold);

}  // namespace bubbleflow
