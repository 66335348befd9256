#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace ledpose {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// 2D pose in the camera frame: x forward along the optical axis, y lateral
/// (right positive), psi in radians wrapped to (-pi, pi].
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
};

/// Pinhole camera model. Image u grows right, v grows down.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
};

/// K LEDs mounted equidistantly around the robot body. LED k (0-based)
/// points at body-frame bearing 2*pi*k/K.
struct LedConfiguration {
  int count = 4;

  double mount_bearing(int k) const;
};

/// On/off state per LED; length must match LedConfiguration::count.
struct LedStateVector {
  std::vector<std::uint8_t> states;

  int size() const { return static_cast<int>(states.size()); }
  bool on(int k) const { return states[static_cast<std::size_t>(k)] != 0; }
};

/// Throws std::invalid_argument if the intrinsics violate their invariants
/// (fx, fy > 0; principal point inside the image).
void validate_intrinsics(const CameraIntrinsics& intr);

/// Wraps theta to (-pi, pi]. Throws std::invalid_argument on non-finite input.
double wrap_angle(double theta);

/// Absolute angular difference on the circle, in [0, pi]. Symmetric.
double circular_error(double psi, double psi_hat);

/// Back-projects pixel (u, v) to the point at Euclidean distance d from the
/// optical center along the pixel ray, drops the vertical component, and
/// wraps psi. Throws std::invalid_argument if d <= 0 or (u, v) is outside
/// the image bounds.
Pose2D back_project(const CameraIntrinsics& intr, double u, double v, double d, double psi);

/// Fraction of (position error, orientation error) pairs with position
/// error < pos_thresh and orientation error < ang_thresh. Throws
/// std::invalid_argument on an empty list or non-positive thresholds.
double pose_accuracy_gamma(const std::vector<std::pair<double, double>>& errors,
                           double pos_thresh, double ang_thresh);

}  // namespace ledpose
