#include "ledpose/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>

namespace ledpose {

namespace {

constexpr double kProbFloor = 1e-12;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Dataset::Dataset(DatasetManifest manifest, bool cache_images, bool allow_pose)
    : manifest_(std::move(manifest)), cache_images_(cache_images), allow_pose_(allow_pose) {
  labels_.reserve(manifest_.records.size());
  cache_.resize(manifest_.records.size());
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    const ManifestRecord& r = manifest_.records[i];
    labels_.push_back(r.leds);
    if (r.split == "train")
      train_idx_.push_back(i);
    else if (r.split == "val")
      val_idx_.push_back(i);
    else if (r.split == "test")
      test_idx_.push_back(i);
    else
      throw std::invalid_argument("Dataset: unknown split '" + r.split + "'");
  }
}

const std::vector<std::size_t>& Dataset::split_indices(const std::string& split) const {
  if (split == "train") return train_idx_;
  if (split == "val") return val_idx_;
  if (split == "test") return test_idx_;
  throw std::invalid_argument("Dataset: unknown split '" + split + "'");
}

Image Dataset::image(std::size_t idx) const {
  if (idx >= manifest_.records.size()) throw std::out_of_range("Dataset::image: index");
  const SceneConfig& scene = manifest_.scene;
  if (cache_images_ && !cache_[idx].empty()) {
    Image img(scene.intrinsics.width, scene.intrinsics.height);
    const std::vector<std::uint8_t>& bytes = cache_[idx];
    for (std::size_t i = 0; i < bytes.size(); ++i)
      img.data[i] = static_cast<float>(bytes[i]) / 255.0f;
    return img;
  }
  namespace fs = std::filesystem;
  Image img = read_png((fs::path(manifest_.root_dir) / manifest_.records[idx].image).string());
  if (cache_images_) {
    if (img.width != scene.intrinsics.width || img.height != scene.intrinsics.height)
      throw std::runtime_error("Dataset::image: frame size differs from the scene intrinsics");
    std::vector<std::uint8_t>& bytes = cache_[idx];
    bytes.resize(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i)
      bytes[i] = static_cast<std::uint8_t>(std::lround(img.data[i] * 255.0f));
  }
  return img;
}

const std::vector<std::uint8_t>& Dataset::leds(std::size_t idx) const {
  if (idx >= labels_.size()) throw std::out_of_range("Dataset::leds: index");
  return labels_[idx];
}

bool Dataset::visible(std::size_t idx) const {
  if (idx >= manifest_.records.size()) throw std::out_of_range("Dataset::visible: index");
  return manifest_.records[idx].visible;
}

Pose2D Dataset::pose(std::size_t idx) const {
  if (!allow_pose_)
    throw std::logic_error("Dataset::pose: pose access is disabled for this dataset");
  if (idx >= manifest_.records.size()) throw std::out_of_range("Dataset::pose: index");
  const ManifestRecord& r = manifest_.records[idx];
  if (!r.pose) throw std::invalid_argument("Dataset::pose: frame has no ground-truth pose");
  ++pose_reads_;
  return *r.pose;
}

void Dataset::permute_labels(std::uint64_t seed) {
  const std::vector<std::size_t>* splits[3] = {&train_idx_, &val_idx_, &test_idx_};
  const char* tags[3] = {"permute.train", "permute.val", "permute.test"};
  for (int s = 0; s < 3; ++s) {
    const std::vector<std::size_t>& idx = *splits[s];
    if (idx.size() < 2) continue;
    std::vector<std::vector<std::uint8_t>> pool;
    pool.reserve(idx.size());
    for (std::size_t i : idx) pool.push_back(labels_[i]);
    Rng rng = Rng::derive(seed, tags[s]);
    for (std::size_t i = pool.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(rng.uniform_int(i + 1));
      std::swap(pool[i], pool[j]);
    }
    for (std::size_t i = 0; i < idx.size(); ++i) labels_[idx[i]] = std::move(pool[i]);
  }
}

Image augment(const Image& image, const AugmentParams& params, Rng& rng) {
  if (!params.enabled) return image;
  Image out = image;
  std::vector<float> field =
      smooth_noise_field(image.width, image.height, params.field_cell, params.field_octaves, rng);
  float brightness = static_cast<float>(rng.uniform(-params.brightness, params.brightness));
  float contrast = static_cast<float>(rng.uniform(1.0 - params.contrast, 1.0 + params.contrast));
  float saturation =
      static_cast<float>(rng.uniform(1.0 - params.saturation, 1.0 + params.saturation));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      float* px = out.px(x, y);
      float m = 1.0f + static_cast<float>(params.field_amp) *
                           field[static_cast<std::size_t>(y) * out.width + x];
      float r = px[0] * m, g = px[1] * m, b = px[2] * m;
      float luma = 0.299f * r + 0.587f * g + 0.114f * b;
      r = luma + saturation * (r - luma);
      g = luma + saturation * (g - luma);
      b = luma + saturation * (b - luma);
      px[0] = std::clamp((r - 0.5f) * contrast + 0.5f + brightness, 0.0f, 1.0f);
      px[1] = std::clamp((g - 0.5f) * contrast + 0.5f + brightness, 0.0f, 1.0f);
      px[2] = std::clamp((b - 0.5f) * contrast + 0.5f + brightness, 0.0f, 1.0f);
    }
  return out;
}

double lr_at(const TrainConfig& cfg, int epoch) {
  if (cfg.epochs < 1) throw std::invalid_argument("lr_at: epochs must be positive");
  if (epoch < 0 || epoch >= cfg.epochs) throw std::out_of_range("lr_at: epoch outside schedule");
  if (cfg.epochs == 1) return cfg.lr_init;
  double phase = kPi * static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.lr_final + (cfg.lr_init - cfg.lr_final) * 0.5 * (1.0 + std::cos(phase));
}

std::size_t early_stop_select(const std::vector<double>& val_losses) {
  if (val_losses.empty()) throw std::invalid_argument("early_stop_select: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_losses.size(); ++i)
    if (val_losses[i] < val_losses[best]) best = i;
  return best;
}

namespace {

struct AdamState {
  double beta1, beta2, eps;
  long t = 0;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<std::vector<float>*>& params, const TrainConfig& cfg) {
    beta1 = cfg.beta1;
    beta2 = cfg.beta2;
    eps = cfg.adam_eps;
    m.resize(params.size());
    v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i]->size(), 0.0);
      v[i].assign(params[i]->size(), 0.0);
    }
  }

  void step(const std::vector<std::vector<float>*>& params,
            const std::vector<std::vector<float>*>& grads, double lr) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::vector<float>& p = *params[i];
      const std::vector<float>& g = *grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        double gj = g[j];
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * gj;
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
        double update = (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + eps);
        p[j] = static_cast<float>(p[j] - lr * update);
      }
    }
  }
};

void zero_stack_grads(const MultiScaleStack& stack, StackGrads& grads) {
  std::size_t n = static_cast<std::size_t>(stack.cells());
  std::size_t S = static_cast<std::size_t>(stack.S());
  grads.presence.assign(S, std::vector<double>(n, 0.0));
  grads.bearing_u.assign(S, std::vector<double>(n, 0.0));
  grads.bearing_v.assign(S, std::vector<double>(n, 0.0));
  grads.led.assign(S, std::vector<std::vector<double>>(static_cast<std::size_t>(stack.K),
                                                       std::vector<double>(n, 0.0)));
}

void scale_stack_grads(StackGrads& grads, double f) {
  for (auto& m : grads.presence)
    for (double& v : m) v *= f;
  for (auto& m : grads.bearing_u)
    for (double& v : m) v *= f;
  for (auto& m : grads.bearing_v)
    for (double& v : m) v *= f;
  for (auto& s : grads.led)
    for (auto& m : s)
      for (double& v : m) v *= f;
}

struct SupervisedTarget {
  int scale = 0;
  int cell = 0;
  double cos_psi = 1.0;
  double sin_psi = 0.0;
  std::vector<std::uint8_t> leds;
};

SupervisedTarget supervised_target(const MultiScaleStack& stack, const Pose2D& pose,
                                   const std::vector<std::uint8_t>& leds,
                                   const CameraIntrinsics& intr, double camera_height,
                                   const Calibration& calibration) {
  SupervisedTarget t;
  if (!(pose.x > 0.0)) throw std::invalid_argument("supervised_target: pose behind the camera");
  double u = intr.cx + intr.fx * pose.y / pose.x;
  double v = intr.cy + intr.fy * camera_height / pose.x;
  double d = std::sqrt(pose.x * pose.x + pose.y * pose.y + camera_height * camera_height);

  int best = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int s = 0; s < stack.S(); ++s) {
    double rep = calibration.d_c * calibration.f[static_cast<std::size_t>(s)];
    double gap = std::abs(std::log(d) - std::log(rep));
    if (gap < best_gap) {
      best_gap = gap;
      best = s;
    }
  }
  t.scale = best;

  double cw = static_cast<double>(intr.width) / stack.w;
  double ch = static_cast<double>(intr.height) / stack.h;
  int col = std::clamp(static_cast<int>(std::floor(u / cw)), 0, stack.w - 1);
  int row = std::clamp(static_cast<int>(std::floor(v / ch)), 0, stack.h - 1);
  t.cell = row * stack.w + col;
  t.cos_psi = std::cos(pose.psi);
  t.sin_psi = std::sin(pose.psi);
  t.leds = leds;
  return t;
}

double supervised_loss(const MultiScaleStack& stack, const SupervisedTarget& tgt,
                       StackGrads* grads) {
  std::size_t s = static_cast<std::size_t>(tgt.scale);
  std::size_t cell = static_cast<std::size_t>(tgt.cell);
  int K = stack.K;

  double p = stack.p_ms_norm[s][cell];
  double ce = -std::log(std::max(p, kProbFloor));

  double c = stack.bearing_c[s][cell];
  double sn = stack.bearing_s[s][cell];
  double pair = (c - tgt.cos_psi) * (c - tgt.cos_psi) + (sn - tgt.sin_psi) * (sn - tgt.sin_psi);

  double led = 0.0;
  for (int k = 0; k < K; ++k) {
    double q = sigmoid(stack.led_logits[s][static_cast<std::size_t>(k)][cell]);
    double qc = std::clamp(q, kBceEps, 1.0 - kBceEps);
    bool on = tgt.leds[static_cast<std::size_t>(k)] != 0;
    led += -(on ? std::log(qc) : std::log(1.0 - qc)) / K;
  }

  if (grads) {
    zero_stack_grads(stack, *grads);
    std::vector<std::vector<double>> grad_p(
        static_cast<std::size_t>(stack.S()),
        std::vector<double>(static_cast<std::size_t>(stack.cells()), 0.0));
    grad_p[s][cell] = -1.0 / std::max(p, kProbFloor);
    softmax_backward(stack, grad_p, *grads);

    double gc = 2.0 * (c - tgt.cos_psi);
    double gs = 2.0 * (sn - tgt.sin_psi);
    normalize_pair_backward(stack.bearing_u[s][cell], stack.bearing_v[s][cell], gc, gs,
                            grads->bearing_u[s][cell], grads->bearing_v[s][cell]);

    for (int k = 0; k < K; ++k) {
      double q = sigmoid(stack.led_logits[s][static_cast<std::size_t>(k)][cell]);
      bool clamped = q < kBceEps || q > 1.0 - kBceEps;
      double l = tgt.leds[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
      grads->led[s][static_cast<std::size_t>(k)][cell] = clamped ? 0.0 : (q - l) / K;
    }
  }
  return ce + pair + led;
}

using LossFn =
    std::function<double(std::size_t rec_idx, const MultiScaleStack& stack, StackGrads& grads)>;
using EvalFn = std::function<double(std::size_t rec_idx, const MultiScaleStack& stack)>;

double run_train_epoch(Model& model, std::vector<TrainContext>& ctxs, Dataset& data,
                       const std::vector<std::size_t>& order, const TrainConfig& cfg, int epoch,
                       double lr, AdamState& adam,
                       const std::vector<std::vector<float>*>& params,
                       const std::vector<std::vector<float>*>& grad_views, const LossFn& loss_fn) {
  const std::vector<double>& scales = model.cfg.scales;
  const int S = static_cast<int>(scales.size());
  double total_loss = 0.0;
  long count = 0;

  for (std::size_t batch_start = 0; batch_start < order.size();
       batch_start += static_cast<std::size_t>(cfg.batch_size)) {
    std::size_t nb = std::min(static_cast<std::size_t>(cfg.batch_size),
                              order.size() - batch_start);
    zero_gradients(model);

    for (std::size_t sub_start = 0; sub_start < nb;
         sub_start += static_cast<std::size_t>(cfg.sub_batch)) {
      std::size_t ns = std::min(static_cast<std::size_t>(cfg.sub_batch), nb - sub_start);

      std::vector<std::vector<Image>> pyramids(ns);
      std::vector<std::size_t> rec(ns);
      for (std::size_t j = 0; j < ns; ++j) {
        rec[j] = order[batch_start + sub_start + j];
        Image img = data.image(rec[j]);
        Rng aug_rng = Rng::derive(cfg.seed, "augment",
                                  static_cast<std::uint64_t>(epoch) * 0x100000000ull + rec[j]);
        pyramids[j] = build_pyramid(augment(img, cfg.augment, aug_rng), scales);
      }

      std::vector<std::vector<RawMaps>> raws(static_cast<std::size_t>(S));
      for (int s = 0; s < S; ++s) {
        std::vector<Image> level;
        level.reserve(ns);
        for (std::size_t j = 0; j < ns; ++j)
          level.push_back(std::move(pyramids[j][static_cast<std::size_t>(s)]));
        Tensor batch = images_to_tensor(level);
        raws[static_cast<std::size_t>(s)] =
            ctxs[static_cast<std::size_t>(s)].forward_train(batch, scales[static_cast<std::size_t>(s)]);
      }

      std::vector<std::vector<RawMaps>> grad_batches(static_cast<std::size_t>(S));
      for (std::size_t j = 0; j < ns; ++j) {
        std::vector<RawMaps> raw_img;
        std::vector<OutputMaps> native;
        raw_img.reserve(static_cast<std::size_t>(S));
        native.reserve(static_cast<std::size_t>(S));
        for (int s = 0; s < S; ++s) {
          raw_img.push_back(raws[static_cast<std::size_t>(s)][j]);
          native.push_back(normalize_maps(raw_img.back()));
        }
        MultiScaleStack stack = build_stack(native);

        StackGrads grads;
        double loss = loss_fn(rec[j], stack, grads);
        total_loss += loss;
        ++count;

        scale_stack_grads(grads, 1.0 / static_cast<double>(nb));
        std::vector<RawMaps> gm = stack_grads_to_native(stack, grads, raw_img);
        for (int s = 0; s < S; ++s)
          grad_batches[static_cast<std::size_t>(s)].push_back(
              std::move(gm[static_cast<std::size_t>(s)]));
      }

      for (int s = 0; s < S; ++s)
        ctxs[static_cast<std::size_t>(s)].backward(grad_batches[static_cast<std::size_t>(s)]);
    }

    adam.step(params, grad_views, lr);
  }
  return count > 0 ? total_loss / static_cast<double>(count) : 0.0;
}

double validation_loss(const Model& model, Dataset& data, const std::vector<std::size_t>& idxs,
                       const EvalFn& eval_fn) {
  if (idxs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t idx : idxs) {
    MultiScaleStack stack = multi_scale_forward(model, data.image(idx));
    total += eval_fn(idx, stack);
  }
  return total / static_cast<double>(idxs.size());
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be positive");
  if (cfg.batch_size < 1 || cfg.sub_batch < 1 || cfg.sub_batch > cfg.batch_size)
    throw std::invalid_argument("train: need 1 <= sub_batch <= batch_size");
  if (cfg.start_epoch < 0 || cfg.start_epoch >= cfg.epochs)
    throw std::invalid_argument("train: start_epoch outside the schedule");
}

TrainHistory train_loop(Model& model, Dataset& data, const TrainConfig& cfg,
                        const std::vector<std::size_t>& train_idx,
                        const std::vector<std::size_t>& val_idx, const LossFn& loss_fn,
                        const EvalFn& eval_fn, const char* phase) {
  validate_train_config(cfg);
  if (train_idx.empty()) throw std::invalid_argument("train: empty training split");

  std::vector<TrainContext> ctxs;
  ctxs.reserve(model.cfg.scales.size());
  for (std::size_t s = 0; s < model.cfg.scales.size(); ++s) ctxs.emplace_back(model);

  std::vector<std::vector<float>*> params = parameter_arrays(model);
  std::vector<std::vector<float>*> grad_views = gradient_arrays(model);
  AdamState adam;
  adam.init(params, cfg);

  TrainHistory history;
  history.best_val = std::numeric_limits<double>::infinity();
  Checkpoint best = snapshot(model);
  int best_global_epoch = -1;

  for (int epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng = Rng::derive(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_int(i + 1));
      std::swap(order[i], order[j]);
    }

    double lr = lr_at(cfg, epoch);
    double train_loss = run_train_epoch(model, ctxs, data, order, cfg, epoch, lr, adam, params,
                                        grad_views, loss_fn);
    double val_loss = validation_loss(model, data, val_idx, eval_fn);

    history.train_loss.push_back(train_loss);
    history.val_loss.push_back(val_loss);
    history.lr.push_back(lr);

    if (val_loss < history.best_val) {
      history.best_val = val_loss;
      history.best_epoch = static_cast<int>(history.val_loss.size()) - 1;
      best_global_epoch = epoch;
      best = snapshot(model);
      best.meta_num["epoch"] = epoch;
      best.meta_num["val_loss"] = val_loss;
      best.meta_num["train_loss"] = train_loss;
      best.meta_num["schedule_epochs"] = cfg.epochs;
      best.meta_str["phase"] = phase;
      if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, best);
    }

    if (cfg.verbose)
      std::printf("epoch %3d  lr %.3e  train %.6f  val %.6f%s\n", epoch, lr, train_loss,
                  val_loss, epoch == best_global_epoch ? "  *" : "");
  }

  restore(model, best);
  history.pose_reads = data.pose_reads();
  return history;
}

}  // namespace

TrainHistory train(Model& model, Dataset& data, const TrainConfig& cfg) {
  std::vector<std::size_t> train_idx = data.split_indices("train");
  if (cfg.max_train_frames > 0 &&
      train_idx.size() > static_cast<std::size_t>(cfg.max_train_frames))
    train_idx.resize(static_cast<std::size_t>(cfg.max_train_frames));

  LossFn loss_fn = [&data](std::size_t idx, const MultiScaleStack& stack, StackGrads& grads) {
    LedStateVector labels;
    labels.states = data.leds(idx);
    return multi_scale_loss_grad(stack, labels, grads).total;
  };
  EvalFn eval_fn = [&data](std::size_t idx, const MultiScaleStack& stack) {
    LedStateVector labels;
    labels.states = data.leds(idx);
    return multi_scale_loss(stack, labels).total;
  };
  return train_loop(model, data, cfg, train_idx, data.split_indices("val"), loss_fn, eval_fn,
                    "selfsup");
}

TrainHistory train_supervised_upperbound(Model& model, Dataset& data, const TrainConfig& cfg,
                                         const Calibration& calibration) {
  if (!calibration.valid() || calibration.f.size() != model.cfg.scales.size())
    throw std::invalid_argument("train_supervised_upperbound: calibration does not match model");

  auto visible_only = [&data](const std::vector<std::size_t>& idxs) {
    std::vector<std::size_t> out;
    for (std::size_t i : idxs)
      if (data.visible(i)) out.push_back(i);
    return out;
  };
  std::vector<std::size_t> train_idx = visible_only(data.split_indices("train"));
  if (cfg.max_train_frames > 0 &&
      train_idx.size() > static_cast<std::size_t>(cfg.max_train_frames))
    train_idx.resize(static_cast<std::size_t>(cfg.max_train_frames));
  std::vector<std::size_t> val_idx = visible_only(data.split_indices("val"));

  const CameraIntrinsics& intr = data.manifest().scene.intrinsics;
  double camera_height = data.manifest().scene.camera_height;

  LossFn loss_fn = [&data, &intr, camera_height, &calibration](
                       std::size_t idx, const MultiScaleStack& stack, StackGrads& grads) {
    SupervisedTarget tgt = supervised_target(stack, data.pose(idx), data.leds(idx), intr,
                                             camera_height, calibration);
    return supervised_loss(stack, tgt, &grads);
  };
  EvalFn eval_fn = [&data, &intr, camera_height, &calibration](std::size_t idx,
                                                               const MultiScaleStack& stack) {
    SupervisedTarget tgt = supervised_target(stack, data.pose(idx), data.leds(idx), intr,
                                             camera_height, calibration);
    return supervised_loss(stack, tgt, nullptr);
  };
  return train_loop(model, data, cfg, train_idx, val_idx, loss_fn, eval_fn, "supervised");
}

}  // namespace ledpose
