#pragma once

#include <vector>

namespace ledpose {

/// Head outputs for one scale before any normalization. Grids are row-major,
/// index = row * w + col.
struct RawMaps {
  int h = 0;
  int w = 0;
  double scale = 1.0;
  std::vector<double> presence;                 // h*w logits
  std::vector<double> bearing_a;                // raw pair channels
  std::vector<double> bearing_b;
  std::vector<std::vector<double>> led_logits;  // K maps of h*w

  int K() const { return static_cast<int>(led_logits.size()); }
};

/// Per-scale maps with the bearing pair unit-normalized. Presence and LED
/// channels stay as logits; presence is normalized only jointly across
/// scales, LED probabilities are taken downstream via sigmoid.
struct OutputMaps {
  int h = 0;
  int w = 0;
  double scale = 1.0;
  std::vector<double> presence;
  std::vector<double> bearing_c;
  std::vector<double> bearing_s;
  std::vector<std::vector<double>> led_logits;

  int K() const { return static_cast<int>(led_logits.size()); }
};

/// All scales aligned to the scale-1 grid. bearing_u/bearing_v hold the
/// upscaled pair before the per-cell renormalization that produces
/// bearing_c/bearing_s; they are kept because gradients are taken with
/// respect to them. p_ms_norm is the joint softmax of the presence logits
/// over every (scale, cell) and sums to 1.
struct MultiScaleStack {
  int h = 0;
  int w = 0;
  int K = 0;
  std::vector<double> scales;
  std::vector<std::vector<double>> presence_logits;          // S x (h*w)
  std::vector<std::vector<double>> bearing_u;                // S x (h*w)
  std::vector<std::vector<double>> bearing_v;
  std::vector<std::vector<double>> bearing_c;                // unit pairs
  std::vector<std::vector<double>> bearing_s;
  std::vector<std::vector<std::vector<double>>> led_logits;  // S x K x (h*w)
  std::vector<std::vector<double>> p_ms_norm;                // S x (h*w)

  int S() const { return static_cast<int>(scales.size()); }
  int cells() const { return h * w; }
};

/// Gradients of a scalar loss with respect to the stack's common-grid
/// inputs: presence logits, the pre-normalization bearing pair, and LED
/// logits. Shapes mirror MultiScaleStack.
struct StackGrads {
  std::vector<std::vector<double>> presence;
  std::vector<std::vector<double>> bearing_u;
  std::vector<std::vector<double>> bearing_v;
  std::vector<std::vector<std::vector<double>>> led;
};

/// Bilinear interpolation from (sh, sw) to (dh, dw), half-pixel centers,
/// edges clamped.
std::vector<double> bilinear_upscale(const std::vector<double>& src, int sh, int sw, int dh,
                                     int dw);

/// Transpose of bilinear_upscale: scatters destination-grid gradients back
/// onto the source grid.
std::vector<double> bilinear_upscale_backward(const std::vector<double>& grad_dst, int dh, int dw,
                                              int sh, int sw);

/// Unit-normalizes (a, b); pairs with norm below 1e-8 map to (1, 0).
void normalize_pair(double a, double b, double& c, double& s);

/// Accumulates d(loss)/d(a, b) given d(loss)/d(c, s) at the same cell.
/// Zero-norm pairs get zero gradient.
void normalize_pair_backward(double a, double b, double gc, double gs, double& ga, double& gb);

/// Applies the bearing-pair normalization to raw head outputs.
OutputMaps normalize_maps(const RawMaps& raw);

/// Upscales every per-scale map to the grid of native[0], renormalizes the
/// interpolated bearing pairs, and softmax-normalizes presence logits
/// jointly over all scales and cells.
MultiScaleStack build_stack(const std::vector<OutputMaps>& native);

/// Softmax gradient helper: given d(loss)/d(p_ms_norm) in grad_p, returns
/// d(loss)/d(presence logits) into grads.presence (overwrites).
void softmax_backward(const MultiScaleStack& stack,
                      const std::vector<std::vector<double>>& grad_p, StackGrads& grads);

/// Maps StackGrads (common grid) back to gradients with respect to each
/// scale's RawMaps. native must be the same maps build_stack consumed, raw
/// the pre-normalization head outputs they came from.
std::vector<RawMaps> stack_grads_to_native(const MultiScaleStack& stack, const StackGrads& grads,
                                           const std::vector<RawMaps>& raw);

}  // namespace ledpose
