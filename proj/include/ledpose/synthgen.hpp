#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ledpose/core.hpp"
#include "ledpose/image.hpp"
#include "ledpose/rng.hpp"

namespace ledpose {

enum class BackgroundStyle { flat, clutter, textured };

struct SceneConfig {
  CameraIntrinsics intrinsics{560.0, 560.0, 160.0, 88.0, 320, 176};
  LedConfiguration led_config{4};
  double robot_size = 0.5;     // body footprint width, meters
  double robot_height = 0.3;   // meters
  double led_size = 0.035;     // LED disc diameter, meters
  double camera_height = 0.0;  // camera above the robot-center plane, meters
  double dist_min = 0.5;       // meters
  double dist_max = 4.0;
  double visible_fraction = 0.23;
  BackgroundStyle background = BackgroundStyle::clutter;
  int domain_id = 0;          // texture/palette key for distinct environments
  int toggle_period = 10;     // frames between LED state resampling
  double led_on_prob = 0.5;
  double boundary_fraction = 0.1;  // visible frames placed near the image edge
  double train_frac = 0.6;
  double val_frac = 0.1;
};

struct Sample {
  Image image;
  LedStateVector led_states;
  Pose2D gt_pose;  // meaningful only when visible
  bool visible = false;
  long frame_id = 0;
};

struct ManifestRecord {
  long frame_id = 0;
  std::string image;  // path relative to the manifest directory
  std::vector<std::uint8_t> leds;
  bool visible = false;
  std::optional<Pose2D> pose;
  std::string split;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  SceneConfig scene;
  std::string root_dir;
};

/// Clamped-cosine LED visibility: weight_k = max(0, cos(psi + 2*pi*k/K)),
/// normalized to sum 1. This is the renderer's ground truth and the
/// independent counterpart of the objective's visibility_weights.
std::vector<double> led_visibility_oracle(double psi, const LedConfiguration& cfg);

/// Background only; style and palette keyed by scene.background/domain_id.
Image render_background(const SceneConfig& scene, Rng& rng);

/// Draws the robot body silhouette and its LEDs over an existing image.
void render_robot(Image& img, const SceneConfig& scene, const Pose2D& pose,
                  const LedStateVector& leds, Rng& rng);

/// Full frame: background plus robot (when the pose projects into view).
/// A pose projecting fully outside the image yields visible = false.
Sample render_frame(const SceneConfig& scene, const Pose2D& pose, const LedStateVector& leds,
                    Rng& rng);

/// Two robots composited far-to-near; used for multi-robot evaluation.
Image render_two_robot_frame(const SceneConfig& scene, const Pose2D& pose_a,
                             const LedStateVector& leds_a, const Pose2D& pose_b,
                             const LedStateVector& leds_b, Rng& rng);

/// Uniform pose inside the viewing frustum and distance range; boundary
/// poses (robot center near the left/right edges) drawn with
/// scene.boundary_fraction probability.
Pose2D sample_pose(const SceneConfig& scene, Rng& rng);

/// Renders n_frames frames into out_dir (images/ subdirectory, manifest.jsonl,
/// scene.json), visibility stratified to the configured fraction, LED states
/// held for toggle_period frames, splits assigned sequentially. Fully
/// deterministic given the seed.
DatasetManifest generate_dataset(const SceneConfig& scene, long n_frames, std::uint64_t seed,
                                 const std::string& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

void save_scene(const SceneConfig& scene, const std::string& path);
SceneConfig load_scene(const std::string& path);

}  // namespace ledpose
