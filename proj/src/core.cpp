#include "ledpose/core.hpp"

#include <cmath>
#include <stdexcept>

namespace ledpose {

double LedConfiguration::mount_bearing(int k) const {
  if (count < 1) throw std::invalid_argument("LedConfiguration: count must be >= 1");
  if (k < 0 || k >= count) throw std::invalid_argument("LedConfiguration: LED index out of range");
  return kTwoPi * static_cast<double>(k) / static_cast<double>(count);
}

void validate_intrinsics(const CameraIntrinsics& intr) {
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0))
    throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
  if (intr.width <= 0 || intr.height <= 0)
    throw std::invalid_argument("CameraIntrinsics: image dimensions must be positive");
  if (!(intr.cx >= 0.0) || !(intr.cx < intr.width) || !(intr.cy >= 0.0) || !(intr.cy < intr.height))
    throw std::invalid_argument("CameraIntrinsics: principal point outside image");
}

double wrap_angle(double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("wrap_angle: non-finite angle");
  double w = std::remainder(theta, kTwoPi);
  if (w <= -kPi) w += kTwoPi;
  return w;
}

double circular_error(double psi, double psi_hat) {
  return std::abs(wrap_angle(psi - psi_hat));
}

Pose2D back_project(const CameraIntrinsics& intr, double u, double v, double d, double psi) {
  validate_intrinsics(intr);
  if (!(d > 0.0)) throw std::invalid_argument("back_project: distance must be positive");
  if (!std::isfinite(u) || !std::isfinite(v)) throw std::invalid_argument("back_project: non-finite pixel");
  if (u < 0.0 || u > intr.width || v < 0.0 || v > intr.height)
    throw std::invalid_argument("back_project: pixel outside image bounds");

  double ry = (u - intr.cx) / intr.fx;
  double rz = -(v - intr.cy) / intr.fy;
  double norm = std::sqrt(1.0 + ry * ry + rz * rz);

  Pose2D p;
  p.x = d / norm;
  p.y = d * ry / norm;
  p.psi = wrap_angle(psi);
  return p;
}

double pose_accuracy_gamma(const std::vector<std::pair<double, double>>& errors,
                           double pos_thresh, double ang_thresh) {
  if (errors.empty()) throw std::invalid_argument("pose_accuracy_gamma: empty error list");
  if (!(pos_thresh > 0.0) || !(ang_thresh > 0.0))
    throw std::invalid_argument("pose_accuracy_gamma: thresholds must be positive");
  std::size_t hits = 0;
  for (const auto& [pos_err, ang_err] : errors) {
    if (pos_err < pos_thresh && ang_err < ang_thresh) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

}  // namespace ledpose
