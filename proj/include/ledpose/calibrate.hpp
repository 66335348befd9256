#pragma once

#include <string>

#include "ledpose/inference.hpp"
#include "ledpose/network.hpp"

namespace ledpose {

struct CalibrationResult {
  Calibration calibration;
  double presence_score = 0.0;  // normalized presence score that gated acceptance
  double multiplier = 0.0;      // sum_s f_s * mass_s before anchoring
};

/// Per-scale distance factors follow the pyramid convention: a robot detected
/// at pyramid scale s sits at distance d_c * s, so f equals cfg.scales and
/// d_c anchors the farthest representable distance.
Calibration default_calibration(const ModelConfig& cfg);

/// One-shot calibration from a single frame of a robot at a known distance.
/// Runs the model, reads the normalized presence score, and refuses (throws
/// std::runtime_error) when it falls below min_presence: anchoring the
/// distance scale to an empty frame would poison every later estimate.
CalibrationResult calibrate_from_image(const Model& model, const Image& image,
                                       double known_distance, double min_presence = 0.2);

/// Geometric fallback when no reference frame is available: a robot of
/// physical size robot_size fills the receptive field at
/// d_rf = robot_size * fx / receptive_field, which is the scale-1 anchor.
Calibration calibrate_from_rf_distance(const ModelConfig& cfg, double robot_size, double fx);

void save_calibration(const Calibration& calibration, const std::string& path);
Calibration load_calibration(const std::string& path);

}  // namespace ledpose
