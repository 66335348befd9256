#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ledpose/inference.hpp"
#include "ledpose/network.hpp"
#include "ledpose/objective.hpp"
#include "ledpose/synthgen.hpp"

namespace ledpose {

/// Manifest-backed frame access for training. Ground-truth poses sit behind
/// a guarded accessor with a read counter so the self-supervised path can
/// prove it never touched them; only the supervised baseline and evaluation
/// enable the guard.
class Dataset {
 public:
  explicit Dataset(DatasetManifest manifest, bool cache_images = true, bool allow_pose = false);

  std::size_t size() const { return manifest_.records.size(); }
  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<std::size_t>& split_indices(const std::string& split) const;

  Image image(std::size_t idx) const;
  const std::vector<std::uint8_t>& leds(std::size_t idx) const;
  bool visible(std::size_t idx) const;

  /// Throws std::logic_error unless constructed with allow_pose, or when the
  /// frame has no pose. Every successful call increments pose_reads().
  Pose2D pose(std::size_t idx) const;
  long pose_reads() const { return pose_reads_; }

  /// Label-shuffling null control: permutes the LED label vectors among the
  /// frames of each split, leaving images untouched.
  void permute_labels(std::uint64_t seed);

 private:
  DatasetManifest manifest_;
  bool cache_images_;
  bool allow_pose_;
  std::vector<std::size_t> train_idx_, val_idx_, test_idx_;
  std::vector<std::vector<std::uint8_t>> labels_;  // permutation-aware copy
  mutable std::vector<std::vector<std::uint8_t>> cache_;
  mutable long pose_reads_ = 0;
};

struct AugmentParams {
  bool enabled = true;
  double field_amp = 0.3;     // multiplicative smooth-noise amplitude
  int field_cell = 40;
  int field_octaves = 2;
  double brightness = 0.10;   // additive jitter half-range
  double contrast = 0.15;     // multiplicative jitter half-range around 1
  double saturation = 0.20;
};

/// Photometric augmentation; with enabled = false the input is returned
/// bit-exactly.
Image augment(const Image& image, const AugmentParams& params, Rng& rng);

struct TrainConfig {
  int epochs = 15;
  int batch_size = 32;
  int sub_batch = 8;          // batch-norm statistics window
  double lr_init = 1e-3;
  double lr_final = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  AugmentParams augment;
  bool verbose = false;
  std::string checkpoint_path;  // best-so-far checkpoint target, optional
  int start_epoch = 0;          // resume position on the cosine schedule
  long max_train_frames = 0;    // 0 = all; otherwise truncates the train split
};

struct TrainHistory {
  std::vector<double> train_loss;  // one entry per trained epoch
  std::vector<double> val_loss;
  std::vector<double> lr;
  int best_epoch = -1;             // index into val_loss
  double best_val = 0.0;
  long pose_reads = 0;             // dataset counter after training
};

/// Cosine decay from lr_init to lr_final across cfg.epochs epochs. Throws
/// std::out_of_range outside [0, epochs).
double lr_at(const TrainConfig& cfg, int epoch);

/// Index of the first strict minimum of per-epoch validation losses.
std::size_t early_stop_select(const std::vector<double>& val_losses);

/// Self-supervised training on LED labels alone. Validation runs in eval
/// mode each epoch; the model is left at the best-validation parameters.
TrainHistory train(Model& model, Dataset& data, const TrainConfig& cfg);

/// Supervised reference trained on ground-truth poses of visible frames:
/// cross-entropy to the target (scale, cell), unit-pair regression to the
/// true bearing, and LED BCE at the target cell. Requires a pose-enabled
/// dataset and a calibration mapping distance to a target scale; scene
/// geometry comes from the dataset manifest.
TrainHistory train_supervised_upperbound(Model& model, Dataset& data, const TrainConfig& cfg,
                                         const Calibration& calibration);

}  // namespace ledpose
