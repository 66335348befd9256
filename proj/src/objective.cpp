#include "ledpose/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ledpose {

namespace {

double bce_one(double p, bool label) {
  double q = std::clamp(p, kBceEps, 1.0 - kBceEps);
  return label ? -std::log(q) : -std::log(1.0 - q);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct LedBasis {
  std::vector<double> cosb, sinb;
};

LedBasis led_basis(int K) {
  LedBasis b;
  b.cosb.resize(static_cast<std::size_t>(K));
  b.sinb.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    double beta = kTwoPi * k / K;
    b.cosb[static_cast<std::size_t>(k)] = std::cos(beta);
    b.sinb[static_cast<std::size_t>(k)] = std::sin(beta);
  }
  return b;
}

// Clamped cosine lobes for one cell; returns total weight W before
// normalization. weights w must hold K slots.
double cell_lobes(double c, double s, const LedBasis& basis, double* w) {
  double W = 0.0;
  for (std::size_t k = 0; k < basis.cosb.size(); ++k) {
    double v = c * basis.cosb[k] - s * basis.sinb[k];
    w[k] = v > 0.0 ? v : 0.0;
    W += w[k];
  }
  return W;
}

}  // namespace

std::vector<double> bce_map(const std::vector<double>& probs, bool label) {
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0) || !(probs[i] <= 1.0))
      throw std::invalid_argument("bce_map: probability outside [0, 1]");
    out[i] = bce_one(probs[i], label);
  }
  return out;
}

std::vector<std::vector<double>> visibility_weights(const std::vector<double>& bearing_c,
                                                    const std::vector<double>& bearing_s, int K) {
  if (K < 1) throw std::invalid_argument("visibility_weights: K must be >= 1");
  if (bearing_c.size() != bearing_s.size())
    throw std::invalid_argument("visibility_weights: pair map size mismatch");
  LedBasis basis = led_basis(K);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(K),
                                       std::vector<double>(bearing_c.size()));
  std::vector<double> w(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < bearing_c.size(); ++i) {
    double W = cell_lobes(bearing_c[i], bearing_s[i], basis, w.data());
    for (int k = 0; k < K; ++k)
      out[static_cast<std::size_t>(k)][i] =
          W > 0.0 ? w[static_cast<std::size_t>(k)] / W : 1.0 / K;
  }
  return out;
}

std::vector<double> visibility_weights_angle(double psi, int K) {
  std::vector<double> c{std::cos(psi)}, s{std::sin(psi)};
  auto maps = visibility_weights(c, s, K);
  std::vector<double> out(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) out[static_cast<std::size_t>(k)] = maps[static_cast<std::size_t>(k)][0];
  return out;
}

std::vector<double> localization_loss(const std::vector<double>& led_loss,
                                      const std::vector<double>& presence_norm) {
  if (led_loss.size() != presence_norm.size())
    throw std::invalid_argument("localization_loss: shape mismatch");
  std::vector<double> out(led_loss.size());
  for (std::size_t i = 0; i < led_loss.size(); ++i) out[i] = led_loss[i] * presence_norm[i];
  return out;
}

LossBreakdown multi_scale_loss(const MultiScaleStack& stack, const LedStateVector& labels) {
  if (labels.size() != stack.K)
    throw std::invalid_argument("multi_scale_loss: label length does not match LED count");
  LossBreakdown lb;
  int K = stack.K, S = stack.S(), cells = stack.cells();
  LedBasis basis = led_basis(K);
  lb.per_led.assign(static_cast<std::size_t>(K), 0.0);
  lb.per_scale.assign(static_cast<std::size_t>(S), 0.0);
  std::vector<double> w(static_cast<std::size_t>(K));
  for (int s = 0; s < S; ++s) {
    const auto& P = stack.p_ms_norm[static_cast<std::size_t>(s)];
    const auto& bc = stack.bearing_c[static_cast<std::size_t>(s)];
    const auto& bs = stack.bearing_s[static_cast<std::size_t>(s)];
    for (int x = 0; x < cells; ++x) {
      double W = cell_lobes(bc[static_cast<std::size_t>(x)], bs[static_cast<std::size_t>(x)],
                            basis, w.data());
      for (int k = 0; k < K; ++k) {
        double lam = W > 0.0 ? w[static_cast<std::size_t>(k)] / W : 1.0 / K;
        double p = sigmoid(
            stack.led_logits[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)]
                            [static_cast<std::size_t>(x)]);
        double term = bce_one(p, labels.on(k)) * P[static_cast<std::size_t>(x)] * lam;
        lb.per_led[static_cast<std::size_t>(k)] += term * K;
        lb.per_scale[static_cast<std::size_t>(s)] += term;
        lb.total += term;
      }
    }
  }
  return lb;
}

LossBreakdown multi_scale_loss_grad(const MultiScaleStack& stack, const LedStateVector& labels,
                                    StackGrads& grads) {
  if (labels.size() != stack.K)
    throw std::invalid_argument("multi_scale_loss_grad: label length does not match LED count");
  int K = stack.K, S = stack.S(), cells = stack.cells();
  LedBasis basis = led_basis(K);

  LossBreakdown lb;
  lb.per_led.assign(static_cast<std::size_t>(K), 0.0);
  lb.per_scale.assign(static_cast<std::size_t>(S), 0.0);

  std::vector<std::vector<double>> grad_p(static_cast<std::size_t>(S),
                                          std::vector<double>(static_cast<std::size_t>(cells), 0.0));
  grads.bearing_u.assign(static_cast<std::size_t>(S),
                         std::vector<double>(static_cast<std::size_t>(cells), 0.0));
  grads.bearing_v.assign(static_cast<std::size_t>(S),
                         std::vector<double>(static_cast<std::size_t>(cells), 0.0));
  grads.led.assign(static_cast<std::size_t>(S),
                   std::vector<std::vector<double>>(
                       static_cast<std::size_t>(K),
                       std::vector<double>(static_cast<std::size_t>(cells), 0.0)));

  std::vector<double> w(static_cast<std::size_t>(K));
  std::vector<double> bce(static_cast<std::size_t>(K));
  std::vector<double> dbce_dz(static_cast<std::size_t>(K));
  std::vector<double> lam(static_cast<std::size_t>(K));
  std::vector<double> dL_dlam(static_cast<std::size_t>(K));

  for (int s = 0; s < S; ++s) {
    const auto& P = stack.p_ms_norm[static_cast<std::size_t>(s)];
    const auto& bc = stack.bearing_c[static_cast<std::size_t>(s)];
    const auto& bs = stack.bearing_s[static_cast<std::size_t>(s)];
    for (int x = 0; x < cells; ++x) {
      std::size_t xi = static_cast<std::size_t>(x);
      double W = cell_lobes(bc[xi], bs[xi], basis, w.data());
      double px = P[xi];

      for (int k = 0; k < K; ++k) {
        std::size_t ki = static_cast<std::size_t>(k);
        lam[ki] = W > 0.0 ? w[ki] / W : 1.0 / K;
        double z = stack.led_logits[static_cast<std::size_t>(s)][ki][xi];
        double praw = sigmoid(z);
        bce[ki] = bce_one(praw, labels.on(k));
        bool clamped = praw <= kBceEps || praw >= 1.0 - kBceEps;
        dbce_dz[ki] = clamped ? 0.0 : praw - (labels.on(k) ? 1.0 : 0.0);
      }

      double cell_sum = 0.0;  // sum_k B_k Lam_k, the weight on P at this cell
      for (int k = 0; k < K; ++k) {
        std::size_t ki = static_cast<std::size_t>(k);
        double term = bce[ki] * px * lam[ki];
        lb.per_led[ki] += term * K;
        lb.per_scale[static_cast<std::size_t>(s)] += term;
        lb.total += term;
        cell_sum += bce[ki] * lam[ki];

        grads.led[static_cast<std::size_t>(s)][ki][xi] = px * lam[ki] * dbce_dz[ki];
        dL_dlam[ki] = bce[ki] * px;
      }
      grad_p[static_cast<std::size_t>(s)][xi] = cell_sum;

      if (W > 0.0) {
        double dot = 0.0;
        for (int k = 0; k < K; ++k)
          dot += dL_dlam[static_cast<std::size_t>(k)] * lam[static_cast<std::size_t>(k)];
        double gC = 0.0, gS = 0.0;
        for (int k = 0; k < K; ++k) {
          std::size_t ki = static_cast<std::size_t>(k);
          if (w[ki] <= 0.0) continue;
          double dL_dw = (dL_dlam[ki] - dot) / W;
          gC += dL_dw * basis.cosb[ki];
          gS -= dL_dw * basis.sinb[ki];
        }
        normalize_pair_backward(stack.bearing_u[static_cast<std::size_t>(s)][xi],
                                stack.bearing_v[static_cast<std::size_t>(s)][xi], gC, gS,
                                grads.bearing_u[static_cast<std::size_t>(s)][xi],
                                grads.bearing_v[static_cast<std::size_t>(s)][xi]);
      }
    }
  }

  softmax_backward(stack, grad_p, grads);
  return lb;
}

}  // namespace ledpose
