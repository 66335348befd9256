#pragma once

#include <utility>
#include <vector>

#include "ledpose/core.hpp"
#include "ledpose/maps.hpp"
#include "ledpose/network.hpp"

namespace ledpose {

struct Calibration {
  std::vector<double> f;  // per-scale distance weights, default = scale factors
  double d_c = 0.0;       // meters
  double rf = 70.0;       // receptive field, pixels

  bool valid() const { return d_c > 0.0 && !f.empty(); }
};

struct PoseEstimate {
  double u = 0.0, v = 0.0;  // pixels
  double psi = 0.0;         // radians
  double d = 0.0;           // meters
  std::vector<double> led_probs;
  double presence_score = 0.0;  // normalized max score in [0, 1]
  double confidence = 0.0;      // entropy confidence in [0, 1]
  Pose2D pose;                  // back-projected metric pose
};

struct PresenceScore {
  double raw = 0.0;    // max cell of p_ms_norm
  double score = 0.0;  // affine mapping with uniform -> 0, one-hot -> 1
};

/// Presence-weighted barycenter of cell centers, mapped to pixels:
/// (u, v) = (W/W', H/H') * sum over scales/cells of p_ms_norm * (index + 0.5).
std::pair<double, double> localize(const MultiScaleStack& stack, const CameraIntrinsics& intr);

/// Presence-weighted circular mean of the bearing maps. A resultant norm
/// below 1e-8 returns 0 and sets *low_confidence when provided.
double estimate_bearing(const MultiScaleStack& stack, bool* low_confidence = nullptr);

/// d_hat = d_c * sum_s f_s * mass_s. Throws if the calibration is missing.
double estimate_distance(const MultiScaleStack& stack, const Calibration& cal);

/// Presence-weighted LED probabilities: sum of p_ms_norm * sigmoid(logit).
std::vector<double> read_led_states(const MultiScaleStack& stack);

PresenceScore detect_presence_max(const MultiScaleStack& stack);

/// Mean certainty 1 - H2(p) over LEDs, binary entropy in base 2.
double detect_presence_entropy(const std::vector<double>& led_probs);

struct ExtractParams {
  int max_robots = 4;
  int nms_radius = 9;      // cells; default = receptive field / downsample, rounded up
  double threshold = 0.5;  // on min-max rescaled logits
};

/// Multi-robot splitting: min-max rescales presence logits jointly over
/// scales, softmaxes the rescaled values, finds thresholded local maxima of
/// the scale-summed rescaled map, suppresses peaks within nms_radius, and
/// returns one renormalized windowed stack per surviving peak. A constant
/// logit map yields an empty list.
std::vector<MultiScaleStack> extract_robots(const MultiScaleStack& stack,
                                            const ExtractParams& params = {});

/// Readout composition on an existing stack.
PoseEstimate estimate_pose_from_stack(const MultiScaleStack& stack, const Calibration& cal,
                                      const CameraIntrinsics& intr);

/// Full pipeline: multi_scale_forward then the readouts.
PoseEstimate estimate_pose(const Model& model, const Image& image, const Calibration& cal,
                           const CameraIntrinsics& intr);

/// Multi-robot variant.
std::vector<PoseEstimate> estimate_poses(const Model& model, const Image& image,
                                         const Calibration& cal, const CameraIntrinsics& intr,
                                         const ExtractParams& params = {});

}  // namespace ledpose
