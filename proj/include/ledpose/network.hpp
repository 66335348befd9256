#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ledpose/image.hpp"
#include "ledpose/maps.hpp"

namespace ledpose {

/// NHWC float tensor.
struct Tensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int h_, int w_, int c_)
      : n(n_), h(h_), w(w_), c(c_),
        data(static_cast<std::size_t>(n_) * h_ * w_ * c_, 0.0f) {}

  std::size_t size() const { return data.size(); }
  float* at(int in, int ih, int iw) {
    return data.data() + ((static_cast<std::size_t>(in) * h + ih) * w + iw) * c;
  }
  const float* at(int in, int ih, int iw) const {
    return data.data() + ((static_cast<std::size_t>(in) * h + ih) * w + iw) * c;
  }
};

struct ModelConfig {
  int input_width = 320;
  int input_height = 176;
  int blocks = 6;
  std::vector<int> channels = {12, 16, 24, 32, 32, 32};
  int downsample = 8;  // three 2x max-poolings
  int receptive_field = 70;
  int led_count = 4;
  std::vector<double> scales = {1.0, 0.5, 0.25};

  int head_channels() const { return 3 + led_count; }  // presence + pair + LEDs
};

/// One 3x3 (blocks) or 1x1 (head) convolution. Weights are stored so that
/// w[tap * out_c + oc] multiplies input tap (ky, kx, ic) flattened
/// row-major; blocks carry no bias (batch norm follows), the head does.
struct ConvLayer {
  int in_c = 0, out_c = 0, ksize = 3;
  bool has_bias = false;
  std::vector<float> w, b;
  std::vector<float> gw, gb;
};

struct BatchNormLayer {
  int c = 0;
  std::vector<float> gamma, beta, run_mean, run_var;
  std::vector<float> ggamma, gbeta;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

struct Model {
  ModelConfig cfg;
  std::vector<ConvLayer> convs;    // cfg.blocks entries
  std::vector<BatchNormLayer> bns; // cfg.blocks entries
  ConvLayer head;                  // 1x1
  // Pooling sits after blocks 0, 1, 2.
  static constexpr int kPoolAfter[3] = {0, 1, 2};

  std::size_t parameter_count() const;
};

/// Validates the config and He-initializes parameters deterministically.
/// Throws std::invalid_argument if scale-1 input dimensions are not
/// divisible by the downsample factor, or shapes are inconsistent.
Model build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Grid size produced for an input of the given size: three floor-halvings.
void output_grid(int in_w, int in_h, int downsample, int& gw, int& gh);

/// Eval-mode forward on one image (batch norm uses running statistics).
/// The image may be any size whose /8 grid is at least 1x1. Raw head maps
/// are returned with the bearing pair normalized.
OutputMaps forward(const Model& model, const Image& image, double scale_tag = 1.0);

/// Average-pool pyramid + one forward per scale + joint normalization.
MultiScaleStack multi_scale_forward(const Model& model, const Image& image);

/// Training-mode forward/backward on a batch. Keeps every intermediate
/// needed by backward; one instance may be reused across calls.
class TrainContext {
 public:
  explicit TrainContext(Model& model) : model_(model) {}

  /// Batch-norm uses batch statistics and updates running averages.
  /// Returns raw per-image head maps (pre-normalization).
  std::vector<RawMaps> forward_train(const Tensor& batch, double scale_tag);

  /// Accumulates parameter gradients from per-image gradients of the raw
  /// head maps (same layout forward_train returned). Call zero_gradients()
  /// on the model before the first backward of an optimizer step.
  void backward(const std::vector<RawMaps>& grad_maps);

 private:
  Model& model_;
  // Saved activations for the last forward_train call.
  Tensor input_;
  std::vector<Tensor> bn_in_;     // conv output = BN input
  std::vector<Tensor> block_out_; // post-ReLU
  std::vector<Tensor> pool_out_;
  std::vector<std::vector<std::uint8_t>> pool_idx_;
  std::vector<std::vector<float>> bn_mean_, bn_invstd_;
  Tensor head_out_;
};

void zero_gradients(Model& model);

/// Converts an RGB image to the network input tensor layout (zero-centered).
Tensor image_to_tensor(const Image& image);
Tensor images_to_tensor(const std::vector<Image>& images);

struct Checkpoint {
  ModelConfig cfg;
  std::vector<std::vector<float>> params;  // flattened arrays, fixed order
  std::map<std::string, double> meta_num;
  std::map<std::string, std::string> meta_str;
};

Checkpoint snapshot(const Model& model);
void restore(Model& model, const Checkpoint& ckpt);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
Model model_from_checkpoint(const Checkpoint& ckpt);

/// Flat views over all trainable parameter and gradient arrays, in the
/// fixed checkpoint order.
std::vector<std::vector<float>*> parameter_arrays(Model& model);
std::vector<std::vector<float>*> gradient_arrays(Model& model);

}  // namespace ledpose
