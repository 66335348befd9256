#include "ledpose/maps.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ledpose {

namespace {

struct Tap {
  int x0, x1;
  double w;  // weight of x1
};

Tap axis_tap(int d, int dn, int sn) {
  double src = (static_cast<double>(d) + 0.5) * static_cast<double>(sn) / dn - 0.5;
  if (src < 0.0) src = 0.0;
  double lim = static_cast<double>(sn - 1);
  if (src > lim) src = lim;
  int x0 = static_cast<int>(std::floor(src));
  int x1 = std::min(x0 + 1, sn - 1);
  return {x0, x1, src - x0};
}

void check_dims(std::size_t n, int h, int w, const char* who) {
  if (h <= 0 || w <= 0 || n != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument(std::string(who) + ": map size does not match dimensions");
}

}  // namespace

std::vector<double> bilinear_upscale(const std::vector<double>& src, int sh, int sw, int dh,
                                     int dw) {
  check_dims(src.size(), sh, sw, "bilinear_upscale");
  if (dh <= 0 || dw <= 0) throw std::invalid_argument("bilinear_upscale: bad target size");
  std::vector<double> dst(static_cast<std::size_t>(dh) * dw);
  for (int y = 0; y < dh; ++y) {
    Tap ty = axis_tap(y, dh, sh);
    for (int x = 0; x < dw; ++x) {
      Tap tx = axis_tap(x, dw, sw);
      double v00 = src[static_cast<std::size_t>(ty.x0) * sw + tx.x0];
      double v01 = src[static_cast<std::size_t>(ty.x0) * sw + tx.x1];
      double v10 = src[static_cast<std::size_t>(ty.x1) * sw + tx.x0];
      double v11 = src[static_cast<std::size_t>(ty.x1) * sw + tx.x1];
      dst[static_cast<std::size_t>(y) * dw + x] = (1.0 - ty.w) * ((1.0 - tx.w) * v00 + tx.w * v01) +
                                                  ty.w * ((1.0 - tx.w) * v10 + tx.w * v11);
    }
  }
  return dst;
}

std::vector<double> bilinear_upscale_backward(const std::vector<double>& grad_dst, int dh, int dw,
                                              int sh, int sw) {
  check_dims(grad_dst.size(), dh, dw, "bilinear_upscale_backward");
  std::vector<double> grad_src(static_cast<std::size_t>(sh) * sw, 0.0);
  for (int y = 0; y < dh; ++y) {
    Tap ty = axis_tap(y, dh, sh);
    for (int x = 0; x < dw; ++x) {
      Tap tx = axis_tap(x, dw, sw);
      double g = grad_dst[static_cast<std::size_t>(y) * dw + x];
      grad_src[static_cast<std::size_t>(ty.x0) * sw + tx.x0] += g * (1.0 - ty.w) * (1.0 - tx.w);
      grad_src[static_cast<std::size_t>(ty.x0) * sw + tx.x1] += g * (1.0 - ty.w) * tx.w;
      grad_src[static_cast<std::size_t>(ty.x1) * sw + tx.x0] += g * ty.w * (1.0 - tx.w);
      grad_src[static_cast<std::size_t>(ty.x1) * sw + tx.x1] += g * ty.w * tx.w;
    }
  }
  return grad_src;
}

void normalize_pair(double a, double b, double& c, double& s) {
  double n = std::sqrt(a * a + b * b);
  if (n < 1e-8) {
    c = 1.0;
    s = 0.0;
    return;
  }
  c = a / n;
  s = b / n;
}

void normalize_pair_backward(double a, double b, double gc, double gs, double& ga, double& gb) {
  double n = std::sqrt(a * a + b * b);
  if (n < 1e-8) return;
  double c = a / n, s = b / n;
  ga += (gc * s - gs * c) * s / n;
  gb += (gs * c - gc * s) * c / n;
}

OutputMaps normalize_maps(const RawMaps& raw) {
  check_dims(raw.presence.size(), raw.h, raw.w, "normalize_maps");
  OutputMaps out;
  out.h = raw.h;
  out.w = raw.w;
  out.scale = raw.scale;
  out.presence = raw.presence;
  out.led_logits = raw.led_logits;
  std::size_t n = raw.presence.size();
  out.bearing_c.resize(n);
  out.bearing_s.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    normalize_pair(raw.bearing_a[i], raw.bearing_b[i], out.bearing_c[i], out.bearing_s[i]);
  return out;
}

MultiScaleStack build_stack(const std::vector<OutputMaps>& native) {
  if (native.empty()) throw std::invalid_argument("build_stack: no scales");
  MultiScaleStack st;
  st.h = native[0].h;
  st.w = native[0].w;
  st.K = native[0].K();
  int S = static_cast<int>(native.size());
  st.scales.resize(static_cast<std::size_t>(S));
  st.presence_logits.resize(static_cast<std::size_t>(S));
  st.bearing_u.resize(static_cast<std::size_t>(S));
  st.bearing_v.resize(static_cast<std::size_t>(S));
  st.bearing_c.resize(static_cast<std::size_t>(S));
  st.bearing_s.resize(static_cast<std::size_t>(S));
  st.led_logits.resize(static_cast<std::size_t>(S));
  st.p_ms_norm.resize(static_cast<std::size_t>(S));

  for (int s = 0; s < S; ++s) {
    const OutputMaps& m = native[static_cast<std::size_t>(s)];
    if (m.K() != st.K) throw std::invalid_argument("build_stack: LED count differs across scales");
    st.scales[static_cast<std::size_t>(s)] = m.scale;
    st.presence_logits[static_cast<std::size_t>(s)] =
        bilinear_upscale(m.presence, m.h, m.w, st.h, st.w);
    st.bearing_u[static_cast<std::size_t>(s)] =
        bilinear_upscale(m.bearing_c, m.h, m.w, st.h, st.w);
    st.bearing_v[static_cast<std::size_t>(s)] =
        bilinear_upscale(m.bearing_s, m.h, m.w, st.h, st.w);
    st.led_logits[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(st.K));
    for (int k = 0; k < st.K; ++k)
      st.led_logits[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)] = bilinear_upscale(
          m.led_logits[static_cast<std::size_t>(k)], m.h, m.w, st.h, st.w);

    std::size_t cells = static_cast<std::size_t>(st.h) * st.w;
    auto& bc = st.bearing_c[static_cast<std::size_t>(s)];
    auto& bs = st.bearing_s[static_cast<std::size_t>(s)];
    bc.resize(cells);
    bs.resize(cells);
    for (std::size_t i = 0; i < cells; ++i)
      normalize_pair(st.bearing_u[static_cast<std::size_t>(s)][i],
                     st.bearing_v[static_cast<std::size_t>(s)][i], bc[i], bs[i]);
  }

  double mx = st.presence_logits[0][0];
  for (const auto& pl : st.presence_logits)
    for (double z : pl) mx = std::max(mx, z);
  double sum = 0.0;
  for (int s = 0; s < S; ++s) {
    const auto& pl = st.presence_logits[static_cast<std::size_t>(s)];
    auto& p = st.p_ms_norm[static_cast<std::size_t>(s)];
    p.resize(pl.size());
    for (std::size_t i = 0; i < pl.size(); ++i) {
      p[i] = std::exp(pl[i] - mx);
      sum += p[i];
    }
  }
  for (auto& p : st.p_ms_norm)
    for (double& v : p) v /= sum;
  return st;
}

void softmax_backward(const MultiScaleStack& stack,
                      const std::vector<std::vector<double>>& grad_p, StackGrads& grads) {
  double dot = 0.0;
  for (std::size_t s = 0; s < stack.p_ms_norm.size(); ++s)
    for (std::size_t i = 0; i < stack.p_ms_norm[s].size(); ++i)
      dot += grad_p[s][i] * stack.p_ms_norm[s][i];
  grads.presence.resize(stack.p_ms_norm.size());
  for (std::size_t s = 0; s < stack.p_ms_norm.size(); ++s) {
    grads.presence[s].assign(stack.p_ms_norm[s].size(), 0.0);
    for (std::size_t i = 0; i < stack.p_ms_norm[s].size(); ++i)
      grads.presence[s][i] = stack.p_ms_norm[s][i] * (grad_p[s][i] - dot);
  }
}

std::vector<RawMaps> stack_grads_to_native(const MultiScaleStack& stack, const StackGrads& grads,
                                           const std::vector<RawMaps>& raw) {
  if (raw.size() != stack.scales.size())
    throw std::invalid_argument("stack_grads_to_native: scale count mismatch");
  std::vector<RawMaps> out(raw.size());
  for (std::size_t s = 0; s < raw.size(); ++s) {
    const RawMaps& r = raw[s];
    RawMaps& g = out[s];
    g.h = r.h;
    g.w = r.w;
    g.scale = r.scale;
    g.presence = bilinear_upscale_backward(grads.presence[s], stack.h, stack.w, r.h, r.w);
    g.led_logits.resize(r.led_logits.size());
    for (std::size_t k = 0; k < r.led_logits.size(); ++k)
      g.led_logits[k] = bilinear_upscale_backward(grads.led[s][k], stack.h, stack.w, r.h, r.w);

    // Unit pair at native resolution feeds the upscaled pair; chain back
    // through the interpolation, then through the native normalization.
    std::vector<double> gc_native =
        bilinear_upscale_backward(grads.bearing_u[s], stack.h, stack.w, r.h, r.w);
    std::vector<double> gs_native =
        bilinear_upscale_backward(grads.bearing_v[s], stack.h, stack.w, r.h, r.w);
    g.bearing_a.assign(r.bearing_a.size(), 0.0);
    g.bearing_b.assign(r.bearing_b.size(), 0.0);
    for (std::size_t i = 0; i < r.bearing_a.size(); ++i)
      normalize_pair_backward(r.bearing_a[i], r.bearing_b[i], gc_native[i], gs_native[i],
                              g.bearing_a[i], g.bearing_b[i]);
  }
  return out;
}

}  // namespace ledpose
