#include "ledpose/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ledpose {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double binary_entropy2(double p) {
  double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return -(q * std::log2(q) + (1.0 - q) * std::log2(1.0 - q));
}

}  // namespace

std::pair<double, double> localize(const MultiScaleStack& stack, const CameraIntrinsics& intr) {
  validate_intrinsics(intr);
  double su = 0.0, sv = 0.0;
  for (int s = 0; s < stack.S(); ++s) {
    const auto& P = stack.p_ms_norm[static_cast<std::size_t>(s)];
    for (int y = 0; y < stack.h; ++y)
      for (int x = 0; x < stack.w; ++x) {
        double p = P[static_cast<std::size_t>(y) * stack.w + x];
        su += p * (x + 0.5);
        sv += p * (y + 0.5);
      }
  }
  return {su * intr.width / stack.w, sv * intr.height / stack.h};
}

double estimate_bearing(const MultiScaleStack& stack, bool* low_confidence) {
  double sc = 0.0, ss = 0.0;
  for (int s = 0; s < stack.S(); ++s) {
    const auto& P = stack.p_ms_norm[static_cast<std::size_t>(s)];
    const auto& bc = stack.bearing_c[static_cast<std::size_t>(s)];
    const auto& bs = stack.bearing_s[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < P.size(); ++i) {
      sc += P[i] * bc[i];
      ss += P[i] * bs[i];
    }
  }
  if (low_confidence) *low_confidence = false;
  if (std::sqrt(sc * sc + ss * ss) < 1e-8) {
    if (low_confidence) *low_confidence = true;
    return 0.0;
  }
  return wrap_angle(std::atan2(ss, sc));
}

double estimate_distance(const MultiScaleStack& stack, const Calibration& cal) {
  if (!cal.valid()) throw std::invalid_argument("estimate_distance: calibration absent");
  if (static_cast<int>(cal.f.size()) != stack.S())
    throw std::invalid_argument("estimate_distance: calibration scale count mismatch");
  double dprime = 0.0;
  for (int s = 0; s < stack.S(); ++s) {
    double mass = 0.0;
    for (double p : stack.p_ms_norm[static_cast<std::size_t>(s)]) mass += p;
    dprime += cal.f[static_cast<std::size_t>(s)] * mass;
  }
  return cal.d_c * dprime;
}

std::vector<double> read_led_states(const MultiScaleStack& stack) {
  std::vector<double> out(static_cast<std::size_t>(stack.K), 0.0);
  for (int s = 0; s < stack.S(); ++s) {
    const auto& P = stack.p_ms_norm[static_cast<std::size_t>(s)];
    for (int k = 0; k < stack.K; ++k) {
      const auto& L = stack.led_logits[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)];
      double acc = 0.0;
      for (std::size_t i = 0; i < P.size(); ++i) acc += P[i] * sigmoid(L[i]);
      out[static_cast<std::size_t>(k)] += acc;
    }
  }
  return out;
}

PresenceScore detect_presence_max(const MultiScaleStack& stack) {
  PresenceScore ps;
  for (const auto& P : stack.p_ms_norm)
    for (double v : P) ps.raw = std::max(ps.raw, v);
  double n = static_cast<double>(stack.S()) * stack.cells();
  ps.score = n > 1.0 ? std::clamp((ps.raw * n - 1.0) / (n - 1.0), 0.0, 1.0) : 1.0;
  return ps;
}

double detect_presence_entropy(const std::vector<double>& led_probs) {
  if (led_probs.empty()) throw std::invalid_argument("detect_presence_entropy: no probabilities");
  double acc = 0.0;
  for (double p : led_probs) {
    if (!(p >= 0.0) || !(p <= 1.0))
      throw std::invalid_argument("detect_presence_entropy: probability outside [0, 1]");
    acc += 1.0 - binary_entropy2(p);
  }
  return acc / static_cast<double>(led_probs.size());
}

std::vector<MultiScaleStack> extract_robots(const MultiScaleStack& stack,
                                            const ExtractParams& params) {
  int S = stack.S(), cells = stack.cells();
  double lo = stack.presence_logits[0][0], hi = lo;
  for (const auto& pl : stack.presence_logits)
    for (double z : pl) {
      lo = std::min(lo, z);
      hi = std::max(hi, z);
    }
  if (hi - lo < 1e-12) return {};

  // Rescale to [0, 1] jointly, then softmax the rescaled values.
  std::vector<std::vector<double>> r(static_cast<std::size_t>(S));
  double esum = 0.0;
  for (int s = 0; s < S; ++s) {
    r[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(cells));
    for (int i = 0; i < cells; ++i) {
      double v = (stack.presence_logits[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] -
                  lo) /
                 (hi - lo);
      r[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] = v;
      esum += std::exp(v);
    }
  }
  std::vector<std::vector<double>> q(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    q[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(cells));
    for (int i = 0; i < cells; ++i)
      q[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] =
          std::exp(r[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)]) / esum;
  }

  // Peak map: rescaled values summed over scales; candidate cells must carry
  // at least one scale above the threshold.
  std::vector<double> A(static_cast<std::size_t>(cells), 0.0);
  std::vector<char> cand(static_cast<std::size_t>(cells), 0);
  for (int i = 0; i < cells; ++i) {
    double mxs = 0.0;
    for (int s = 0; s < S; ++s) {
      A[static_cast<std::size_t>(i)] += r[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
      mxs = std::max(mxs, r[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)]);
    }
    cand[static_cast<std::size_t>(i)] = mxs >= params.threshold ? 1 : 0;
  }

  struct Peak {
    int row, col;
    double score;
  };
  std::vector<Peak> peaks;
  for (int y = 0; y < stack.h; ++y)
    for (int x = 0; x < stack.w; ++x) {
      std::size_t i = static_cast<std::size_t>(y) * stack.w + x;
      if (!cand[i]) continue;
      double v = A[i];
      bool is_peak = true;
      for (int dy = -1; dy <= 1 && is_peak; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= stack.h || nx < 0 || nx >= stack.w) continue;
          if (A[static_cast<std::size_t>(ny) * stack.w + nx] > v) {
            is_peak = false;
            break;
          }
        }
      if (is_peak) peaks.push_back({y, x, v});
    }

  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const Peak& a, const Peak& b) { return a.score > b.score; });
  std::vector<Peak> kept;
  for (const Peak& p : peaks) {
    bool suppressed = false;
    for (const Peak& k : kept) {
      double dy = p.row - k.row, dx = p.col - k.col;
      if (std::sqrt(dy * dy + dx * dx) < params.nms_radius) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(p);
    if (static_cast<int>(kept.size()) >= params.max_robots) break;
  }

  std::vector<MultiScaleStack> out;
  for (const Peak& p : kept) {
    MultiScaleStack sub = stack;
    double mass = 0.0;
    for (int s = 0; s < S; ++s) {
      auto& P = sub.p_ms_norm[static_cast<std::size_t>(s)];
      for (int y = 0; y < stack.h; ++y)
        for (int x = 0; x < stack.w; ++x) {
          std::size_t i = static_cast<std::size_t>(y) * stack.w + x;
          if (std::abs(y - p.row) > params.nms_radius || std::abs(x - p.col) > params.nms_radius) {
            P[i] = 0.0;
          } else {
            P[i] = q[static_cast<std::size_t>(s)][i];
            mass += P[i];
          }
        }
    }
    if (mass <= 0.0) continue;
    for (auto& P : sub.p_ms_norm)
      for (double& v : P) v /= mass;
    out.push_back(std::move(sub));
  }
  return out;
}

PoseEstimate estimate_pose_from_stack(const MultiScaleStack& stack, const Calibration& cal,
                                      const CameraIntrinsics& intr) {
  PoseEstimate est;
  auto [u, v] = localize(stack, intr);
  est.u = u;
  est.v = v;
  est.psi = estimate_bearing(stack);
  est.d = estimate_distance(stack, cal);
  est.led_probs = read_led_states(stack);
  est.presence_score = detect_presence_max(stack).score;
  est.confidence = detect_presence_entropy(est.led_probs);
  double cu = std::clamp(est.u, 0.0, static_cast<double>(intr.width));
  double cv = std::clamp(est.v, 0.0, static_cast<double>(intr.height));
  est.pose = back_project(intr, cu, cv, est.d, est.psi);
  return est;
}

PoseEstimate estimate_pose(const Model& model, const Image& image, const Calibration& cal,
                           const CameraIntrinsics& intr) {
  return estimate_pose_from_stack(multi_scale_forward(model, image), cal, intr);
}

std::vector<PoseEstimate> estimate_poses(const Model& model, const Image& image,
                                         const Calibration& cal, const CameraIntrinsics& intr,
                                         const ExtractParams& params) {
  MultiScaleStack stack = multi_scale_forward(model, image);
  std::vector<PoseEstimate> out;
  for (const MultiScaleStack& sub : extract_robots(stack, params))
    out.push_back(estimate_pose_from_stack(sub, cal, intr));
  return out;
}

}  // namespace ledpose
