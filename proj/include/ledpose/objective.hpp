#pragma once

#include <vector>

#include "ledpose/core.hpp"
#include "ledpose/maps.hpp"

namespace ledpose {

inline constexpr double kBceEps = 1e-7;

/// Loss totals: total = mean over LEDs of the summed per-scale spatial
/// contributions.
struct LossBreakdown {
  double total = 0.0;
  std::vector<double> per_led;    // K entries, total = mean(per_led)
  std::vector<double> per_scale;  // S entries, total = sum(per_scale)
};

/// Cellwise binary cross-entropy of a probability map against one boolean
/// label, probabilities clamped to [eps, 1-eps]. Throws on out-of-range
/// probabilities.
std::vector<double> bce_map(const std::vector<double>& probs, bool label);

/// Clamped-cosine LED visibility weights from a bearing given as unit
/// (cos, sin) maps: weight_k = max(0, cos(psi + 2*pi*k/K)), normalized to
/// sum 1 over k at every cell.
std::vector<std::vector<double>> visibility_weights(const std::vector<double>& bearing_c,
                                                    const std::vector<double>& bearing_s, int K);

/// Convenience overload for a single angle.
std::vector<double> visibility_weights_angle(double psi, int K);

/// Elementwise product of an LED loss map with a normalized presence map.
std::vector<double> localization_loss(const std::vector<double>& led_loss,
                                      const std::vector<double>& presence_norm);

/// Multi-scale pretext loss over a normalized stack:
/// total = sum over k, s, cells of BCE(sigmoid(led logit), l_k)
///         * p_ms_norm * visibility_weight_k.
/// The combined weights form a partition of unity over (k, s, cell), so the
/// total is a weighted mean of cell BCEs and uniform 0.5 predictions score
/// exactly ln 2.
LossBreakdown multi_scale_loss(const MultiScaleStack& stack, const LedStateVector& labels);

/// Loss plus analytic gradients with respect to the stack's common-grid
/// presence logits, pre-normalization bearing pairs, and LED logits.
LossBreakdown multi_scale_loss_grad(const MultiScaleStack& stack, const LedStateVector& labels,
                                    StackGrads& grads);

}  // namespace ledpose
