#pragma once

#include <string>
#include <vector>

#include "ledpose/inference.hpp"
#include "ledpose/network.hpp"
#include "ledpose/synthgen.hpp"

namespace ledpose {

struct MetricsReport {
  double e_uv = 0.0;      // median image-space position error, pixels
  double e_psi = 0.0;     // median absolute bearing error, radians
  double e_d = 0.0;       // mean relative distance error
  double auc_led = 0.0;   // mean per-LED state AUC over facing frames
  double gamma = 0.0;     // fraction within 1 m and 45 degrees
  long n_samples = 0;     // visible frames scored
};

struct DetectionReport {
  double auc_max = 0.0;      // presence score vs. robot-in-frame label
  double auc_entropy = 0.0;  // LED-entropy confidence vs. the same label
  long n_positive = 0;
  long n_negative = 0;
};

inline constexpr double kGammaPosThresh = 1.0;           // meters
inline constexpr double kGammaAngThresh = kPi / 4.0;     // radians

/// Area under the ROC curve by the rank statistic, ties counted half.
/// Throws std::invalid_argument unless both classes are present.
double auc_binary(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

/// Scores the model over the visible frames of one manifest split. Per-LED
/// AUC is computed only on frames whose ground-truth bearing turns that LED
/// toward the camera; LEDs with a single class there are skipped.
MetricsReport evaluate(const Model& model, const DatasetManifest& manifest,
                       const Calibration& calibration, const std::string& split);

/// Presence detection over every frame of the split (visible = positive).
DetectionReport evaluate_detection(const Model& model, const DatasetManifest& manifest,
                                   const std::string& split);

/// Constant baseline: arithmetic mean of visible train positions plus the
/// circular mean bearing.
Pose2D mean_predictor(const DatasetManifest& manifest, const std::string& split = "train");

/// Scores a constant pose prediction on the split, same metrics as evaluate.
/// LED AUC is undefined for a constant predictor and reported as 0.5.
MetricsReport evaluate_constant_pose(const DatasetManifest& manifest, const Pose2D& pose,
                                     const std::string& split);

void save_report(const MetricsReport& report, const std::string& path);
MetricsReport load_report(const std::string& path);

}  // namespace ledpose
