#include "ledpose/network.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include <json.hpp>

#include "ledpose/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace ledpose {

namespace {

using nlohmann::json;

void force_single_thread_blas() {
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

void validate_config(const ModelConfig& cfg) {
  if (cfg.blocks < 4) throw std::invalid_argument("ModelConfig: at least 4 blocks required");
  if (static_cast<int>(cfg.channels.size()) != cfg.blocks)
    throw std::invalid_argument("ModelConfig: channel list length must equal block count");
  for (int c : cfg.channels)
    if (c < 1) throw std::invalid_argument("ModelConfig: channels must be positive");
  if (cfg.downsample != 8)
    throw std::invalid_argument("ModelConfig: downsample factor must be 8 (three 2x poolings)");
  if (cfg.input_width % cfg.downsample != 0 || cfg.input_height % cfg.downsample != 0)
    throw std::invalid_argument(
        "ModelConfig: input dimensions must be divisible by the downsample factor");
  if (cfg.led_count < 1) throw std::invalid_argument("ModelConfig: led_count must be >= 1");
  if (cfg.scales.empty() || cfg.scales[0] != 1.0)
    throw std::invalid_argument("ModelConfig: first scale factor must be 1");
  for (std::size_t i = 1; i < cfg.scales.size(); ++i)
    if (!(cfg.scales[i] < cfg.scales[i - 1]))
      throw std::invalid_argument("ModelConfig: scale factors must be strictly decreasing");
  if (cfg.receptive_field < 1) throw std::invalid_argument("ModelConfig: bad receptive field");
}

// im2col for 3x3 same-padding convolution; buf is (9*c) x (h*w) col-major.
void im2col3(const Tensor& in, int n_img, std::vector<float>& buf) {
  int h = in.h, w = in.w, c = in.c;
  buf.assign(static_cast<std::size_t>(9) * c * h * w, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float* col = buf.data() + (static_cast<std::size_t>(y) * w + x) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          std::memcpy(col + (ky * 3 + kx) * c, in.at(n_img, sy, sx),
                      static_cast<std::size_t>(c) * sizeof(float));
        }
      }
    }
  }
}

void col2im3(const std::vector<float>& buf, Tensor& din, int n_img) {
  int h = din.h, w = din.w, c = din.c;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float* col = buf.data() + (static_cast<std::size_t>(y) * w + x) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          float* dst = din.at(n_img, sy, sx);
          const float* src = col + (ky * 3 + kx) * c;
          for (int ic = 0; ic < c; ++ic) dst[ic] += src[ic];
        }
      }
    }
  }
}

void conv_forward(const ConvLayer& layer, const Tensor& in, Tensor& out,
                  std::vector<float>& scratch) {
  force_single_thread_blas();
  out = Tensor(in.n, in.h, in.w, layer.out_c);
  int hw = in.h * in.w;
  for (int n = 0; n < in.n; ++n) {
    const float* bmat;
    int ldb;
    if (layer.ksize == 1) {
      bmat = in.at(n, 0, 0);
      ldb = in.c;
    } else {
      im2col3(in, n, scratch);
      bmat = scratch.data();
      ldb = 9 * in.c;
    }
    cblas_sgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, layer.out_c, hw, ldb, 1.0f,
                layer.w.data(), layer.out_c, bmat, ldb, 0.0f, out.at(n, 0, 0), layer.out_c);
    if (layer.has_bias) {
      float* dst = out.at(n, 0, 0);
      for (int i = 0; i < hw; ++i)
        for (int oc = 0; oc < layer.out_c; ++oc) dst[static_cast<std::size_t>(i) * layer.out_c + oc] += layer.b[static_cast<std::size_t>(oc)];
    }
  }
}

// Accumulates parameter grads; writes input grads when din != nullptr.
void conv_backward(ConvLayer& layer, const Tensor& in, const Tensor& gout, Tensor* din,
                   std::vector<float>& scratch, std::vector<float>& scratch2) {
  force_single_thread_blas();
  int hw = in.h * in.w;
  if (din) *din = Tensor(in.n, in.h, in.w, in.c);
  for (int n = 0; n < in.n; ++n) {
    const float* bmat;
    int taps;
    if (layer.ksize == 1) {
      bmat = in.at(n, 0, 0);
      taps = in.c;
    } else {
      im2col3(in, n, scratch);
      bmat = scratch.data();
      taps = 9 * in.c;
    }
    // dW += dOut * patches^T
    cblas_sgemm(CblasColMajor, CblasNoTrans, CblasTrans, layer.out_c, taps, hw, 1.0f,
                gout.at(n, 0, 0), layer.out_c, bmat, taps, 1.0f, layer.gw.data(), layer.out_c);
    if (layer.has_bias) {
      const float* g = gout.at(n, 0, 0);
      for (int i = 0; i < hw; ++i)
        for (int oc = 0; oc < layer.out_c; ++oc) layer.gb[static_cast<std::size_t>(oc)] += g[static_cast<std::size_t>(i) * layer.out_c + oc];
    }
    if (!din) continue;
    if (layer.ksize == 1) {
      cblas_sgemm(CblasColMajor, CblasTrans, CblasNoTrans, in.c, hw, layer.out_c, 1.0f,
                  layer.w.data(), layer.out_c, gout.at(n, 0, 0), layer.out_c, 0.0f,
                  din->at(n, 0, 0), in.c);
    } else {
      scratch2.assign(static_cast<std::size_t>(taps) * hw, 0.0f);
      cblas_sgemm(CblasColMajor, CblasTrans, CblasNoTrans, taps, hw, layer.out_c, 1.0f,
                  layer.w.data(), layer.out_c, gout.at(n, 0, 0), layer.out_c, 0.0f,
                  scratch2.data(), taps);
      col2im3(scratch2, *din, n);
    }
  }
}

void bn_forward_train(BatchNormLayer& bn, const Tensor& in, Tensor& out,
                      std::vector<float>& mean_out, std::vector<float>& invstd_out) {
  out = Tensor(in.n, in.h, in.w, in.c);
  std::size_t spatial = static_cast<std::size_t>(in.n) * in.h * in.w;
  mean_out.assign(static_cast<std::size_t>(in.c), 0.0f);
  invstd_out.assign(static_cast<std::size_t>(in.c), 0.0f);
  for (int ch = 0; ch < in.c; ++ch) {
    double sum = 0.0, sumsq = 0.0;
    const float* src = in.data.data() + ch;
    for (std::size_t i = 0; i < spatial; ++i) {
      double v = src[i * in.c];
      sum += v;
      sumsq += v * v;
    }
    double mean = sum / static_cast<double>(spatial);
    double var = sumsq / static_cast<double>(spatial) - mean * mean;
    if (var < 0.0) var = 0.0;
    double invstd = 1.0 / std::sqrt(var + bn.eps);
    mean_out[static_cast<std::size_t>(ch)] = static_cast<float>(mean);
    invstd_out[static_cast<std::size_t>(ch)] = static_cast<float>(invstd);
    bn.run_mean[static_cast<std::size_t>(ch)] =
        (1.0f - bn.momentum) * bn.run_mean[static_cast<std::size_t>(ch)] +
        bn.momentum * static_cast<float>(mean);
    bn.run_var[static_cast<std::size_t>(ch)] =
        (1.0f - bn.momentum) * bn.run_var[static_cast<std::size_t>(ch)] +
        bn.momentum * static_cast<float>(var);
    float g = bn.gamma[static_cast<std::size_t>(ch)], b = bn.beta[static_cast<std::size_t>(ch)];
    float m = static_cast<float>(mean), is = static_cast<float>(invstd);
    float* dst = out.data.data() + ch;
    for (std::size_t i = 0; i < spatial; ++i) dst[i * in.c] = g * (src[i * in.c] - m) * is + b;
  }
}

void bn_forward_eval(const BatchNormLayer& bn, Tensor& x) {
  std::size_t spatial = static_cast<std::size_t>(x.n) * x.h * x.w;
  for (int ch = 0; ch < x.c; ++ch) {
    float is = 1.0f / std::sqrt(bn.run_var[static_cast<std::size_t>(ch)] + bn.eps);
    float g = bn.gamma[static_cast<std::size_t>(ch)] * is;
    float b = bn.beta[static_cast<std::size_t>(ch)] -
              bn.run_mean[static_cast<std::size_t>(ch)] * g;
    float* p = x.data.data() + ch;
    for (std::size_t i = 0; i < spatial; ++i) p[i * x.c] = g * p[i * x.c] + b;
  }
}

void bn_backward(BatchNormLayer& bn, const Tensor& in, const std::vector<float>& mean,
                 const std::vector<float>& invstd, const Tensor& gout, Tensor& gin) {
  gin = Tensor(in.n, in.h, in.w, in.c);
  std::size_t spatial = static_cast<std::size_t>(in.n) * in.h * in.w;
  double N = static_cast<double>(spatial);
  for (int ch = 0; ch < in.c; ++ch) {
    std::size_t ci = static_cast<std::size_t>(ch);
    const float* x = in.data.data() + ch;
    const float* dy = gout.data.data() + ch;
    float m = mean[ci], is = invstd[ci];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) {
      double xhat = (x[i * in.c] - m) * is;
      sum_dy += dy[i * in.c];
      sum_dy_xhat += dy[i * in.c] * xhat;
    }
    bn.gbeta[ci] += static_cast<float>(sum_dy);
    bn.ggamma[ci] += static_cast<float>(sum_dy_xhat);
    float g = bn.gamma[ci];
    float* dx = gin.data.data() + ch;
    float mean_dy = static_cast<float>(sum_dy / N);
    float mean_dy_xhat = static_cast<float>(sum_dy_xhat / N);
    for (std::size_t i = 0; i < spatial; ++i) {
      float xhat = (x[i * in.c] - m) * is;
      dx[i * in.c] = g * is * (dy[i * in.c] - mean_dy - xhat * mean_dy_xhat);
    }
  }
}

void relu_inplace(Tensor& x) {
  for (float& v : x.data)
    if (v < 0.0f) v = 0.0f;
}

void relu_backward(const Tensor& post, const Tensor& gout, Tensor& gin) {
  gin = Tensor(post.n, post.h, post.w, post.c);
  for (std::size_t i = 0; i < post.data.size(); ++i)
    gin.data[i] = post.data[i] > 0.0f ? gout.data[i] : 0.0f;
}

void maxpool_forward(const Tensor& in, Tensor& out, std::vector<std::uint8_t>& idx) {
  int h2 = in.h / 2, w2 = in.w / 2;
  out = Tensor(in.n, h2, w2, in.c);
  idx.assign(out.size(), 0);
  for (int n = 0; n < in.n; ++n)
    for (int y = 0; y < h2; ++y)
      for (int x = 0; x < w2; ++x) {
        const float* s00 = in.at(n, 2 * y, 2 * x);
        const float* s01 = in.at(n, 2 * y, 2 * x + 1);
        const float* s10 = in.at(n, 2 * y + 1, 2 * x);
        const float* s11 = in.at(n, 2 * y + 1, 2 * x + 1);
        float* o = out.at(n, y, x);
        std::size_t base = static_cast<std::size_t>(o - out.data.data());
        for (int ch = 0; ch < in.c; ++ch) {
          float best = s00[ch];
          std::uint8_t which = 0;
          if (s01[ch] > best) { best = s01[ch]; which = 1; }
          if (s10[ch] > best) { best = s10[ch]; which = 2; }
          if (s11[ch] > best) { best = s11[ch]; which = 3; }
          o[ch] = best;
          idx[base + static_cast<std::size_t>(ch)] = which;
        }
      }
}

void maxpool_backward(const Tensor& in, const Tensor& gout, const std::vector<std::uint8_t>& idx,
                      Tensor& gin) {
  gin = Tensor(in.n, in.h, in.w, in.c);
  for (int n = 0; n < gout.n; ++n)
    for (int y = 0; y < gout.h; ++y)
      for (int x = 0; x < gout.w; ++x) {
        const float* g = gout.at(n, y, x);
        std::size_t base = static_cast<std::size_t>(g - gout.data.data());
        for (int ch = 0; ch < gout.c; ++ch) {
          std::uint8_t which = idx[base + static_cast<std::size_t>(ch)];
          int sy = 2 * y + (which >> 1);
          int sx = 2 * x + (which & 1);
          gin.at(n, sy, sx)[ch] += g[ch];
        }
      }
}

int pool_slot(int block) {
  for (int p = 0; p < 3; ++p)
    if (Model::kPoolAfter[p] == block) return p;
  return -1;
}

RawMaps extract_raw(const Tensor& head_out, int n_img, int K, double scale_tag) {
  RawMaps r;
  r.h = head_out.h;
  r.w = head_out.w;
  r.scale = scale_tag;
  std::size_t cells = static_cast<std::size_t>(r.h) * r.w;
  r.presence.resize(cells);
  r.bearing_a.resize(cells);
  r.bearing_b.resize(cells);
  r.led_logits.assign(static_cast<std::size_t>(K), std::vector<double>(cells));
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) {
      const float* p = head_out.at(n_img, y, x);
      std::size_t i = static_cast<std::size_t>(y) * r.w + x;
      r.presence[i] = p[0];
      r.bearing_a[i] = p[1];
      r.bearing_b[i] = p[2];
      for (int k = 0; k < K; ++k) r.led_logits[static_cast<std::size_t>(k)][i] = p[3 + k];
    }
  return r;
}

}  // namespace

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& cv : convs) total += cv.w.size() + cv.b.size();
  for (const auto& bn : bns) total += bn.gamma.size() + bn.beta.size();
  total += head.w.size() + head.b.size();
  return total;
}

void output_grid(int in_w, int in_h, int downsample, int& gw, int& gh) {
  gw = in_w;
  gh = in_h;
  for (int d = downsample; d > 1; d /= 2) {
    gw /= 2;
    gh /= 2;
  }
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  force_single_thread_blas();
  Model m;
  m.cfg = cfg;
  m.convs.resize(static_cast<std::size_t>(cfg.blocks));
  m.bns.resize(static_cast<std::size_t>(cfg.blocks));
  int prev_c = 3;
  for (int i = 0; i < cfg.blocks; ++i) {
    ConvLayer& cv = m.convs[static_cast<std::size_t>(i)];
    cv.in_c = prev_c;
    cv.out_c = cfg.channels[static_cast<std::size_t>(i)];
    cv.ksize = 3;
    cv.has_bias = false;
    cv.w.resize(static_cast<std::size_t>(9) * cv.in_c * cv.out_c);
    cv.gw.assign(cv.w.size(), 0.0f);
    Rng rng = Rng::derive(seed, "init.conv", static_cast<std::uint64_t>(i));
    double std = std::sqrt(2.0 / (9.0 * cv.in_c));
    for (float& v : cv.w) v = static_cast<float>(rng.normal(0.0, std));

    BatchNormLayer& bn = m.bns[static_cast<std::size_t>(i)];
    bn.c = cv.out_c;
    bn.gamma.assign(static_cast<std::size_t>(bn.c), 1.0f);
    bn.beta.assign(static_cast<std::size_t>(bn.c), 0.0f);
    bn.run_mean.assign(static_cast<std::size_t>(bn.c), 0.0f);
    bn.run_var.assign(static_cast<std::size_t>(bn.c), 1.0f);
    bn.ggamma.assign(static_cast<std::size_t>(bn.c), 0.0f);
    bn.gbeta.assign(static_cast<std::size_t>(bn.c), 0.0f);
    prev_c = cv.out_c;
  }
  ConvLayer& hd = m.head;
  hd.in_c = prev_c;
  hd.out_c = cfg.head_channels();
  hd.ksize = 1;
  hd.has_bias = true;
  hd.w.resize(static_cast<std::size_t>(hd.in_c) * hd.out_c);
  hd.b.assign(static_cast<std::size_t>(hd.out_c), 0.0f);
  hd.gw.assign(hd.w.size(), 0.0f);
  hd.gb.assign(hd.b.size(), 0.0f);
  Rng rng = Rng::derive(seed, "init.head");
  double std = std::sqrt(2.0 / hd.in_c);
  for (float& v : hd.w) v = static_cast<float>(rng.normal(0.0, std));
  return m;
}

Tensor image_to_tensor(const Image& image) {
  Tensor t(1, image.height, image.width, 3);
  for (std::size_t i = 0; i < image.data.size(); ++i) t.data[i] = image.data[i] - 0.5f;
  return t;
}

Tensor images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  Tensor t(static_cast<int>(images.size()), images[0].height, images[0].width, 3);
  std::size_t per = images[0].data.size();
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].data.size() != per)
      throw std::invalid_argument("images_to_tensor: mixed image sizes");
    for (std::size_t i = 0; i < per; ++i) t.data[n * per + i] = images[n].data[i] - 0.5f;
  }
  return t;
}

OutputMaps forward(const Model& model, const Image& image, double scale_tag) {
  int gw, gh;
  output_grid(image.width, image.height, model.cfg.downsample, gw, gh);
  if (gw < 1 || gh < 1) throw std::invalid_argument("forward: input too small for model");
  Tensor x = image_to_tensor(image);
  std::vector<float> scratch;
  Tensor tmp;
  for (int i = 0; i < model.cfg.blocks; ++i) {
    conv_forward(model.convs[static_cast<std::size_t>(i)], x, tmp, scratch);
    x = std::move(tmp);
    bn_forward_eval(model.bns[static_cast<std::size_t>(i)], x);
    relu_inplace(x);
    if (pool_slot(i) >= 0) {
      std::vector<std::uint8_t> idx;
      maxpool_forward(x, tmp, idx);
      x = std::move(tmp);
    }
  }
  conv_forward(model.head, x, tmp, scratch);
  RawMaps raw = extract_raw(tmp, 0, model.cfg.led_count, scale_tag);
  return normalize_maps(raw);
}

MultiScaleStack multi_scale_forward(const Model& model, const Image& image) {
  std::vector<Image> pyr = build_pyramid(image, model.cfg.scales);
  std::vector<OutputMaps> native;
  native.reserve(pyr.size());
  for (std::size_t s = 0; s < pyr.size(); ++s) {
    int gw, gh;
    output_grid(pyr[s].width, pyr[s].height, model.cfg.downsample, gw, gh);
    if (gw < 1 || gh < 1)
      throw std::invalid_argument("multi_scale_forward: scale grid smaller than 1x1");
    native.push_back(forward(model, pyr[s], model.cfg.scales[s]));
  }
  return build_stack(native);
}

std::vector<RawMaps> TrainContext::forward_train(const Tensor& batch, double scale_tag) {
  const ModelConfig& cfg = model_.cfg;
  input_ = batch;
  bn_in_.resize(static_cast<std::size_t>(cfg.blocks));
  block_out_.resize(static_cast<std::size_t>(cfg.blocks));
  pool_out_.resize(3);
  pool_idx_.resize(3);
  bn_mean_.resize(static_cast<std::size_t>(cfg.blocks));
  bn_invstd_.resize(static_cast<std::size_t>(cfg.blocks));

  std::vector<float> scratch;
  const Tensor* cur = &input_;
  for (int i = 0; i < cfg.blocks; ++i) {
    std::size_t bi = static_cast<std::size_t>(i);
    conv_forward(model_.convs[bi], *cur, bn_in_[bi], scratch);
    bn_forward_train(model_.bns[bi], bn_in_[bi], block_out_[bi], bn_mean_[bi], bn_invstd_[bi]);
    relu_inplace(block_out_[bi]);
    int p = pool_slot(i);
    if (p >= 0) {
      maxpool_forward(block_out_[bi], pool_out_[static_cast<std::size_t>(p)],
                      pool_idx_[static_cast<std::size_t>(p)]);
      cur = &pool_out_[static_cast<std::size_t>(p)];
    } else {
      cur = &block_out_[bi];
    }
  }
  conv_forward(model_.head, *cur, head_out_, scratch);

  std::vector<RawMaps> out;
  out.reserve(static_cast<std::size_t>(batch.n));
  for (int n = 0; n < batch.n; ++n)
    out.push_back(extract_raw(head_out_, n, cfg.led_count, scale_tag));
  return out;
}

void TrainContext::backward(const std::vector<RawMaps>& grad_maps) {
  const ModelConfig& cfg = model_.cfg;
  if (static_cast<int>(grad_maps.size()) != input_.n)
    throw std::invalid_argument("TrainContext::backward: batch size mismatch");

  Tensor ghead(head_out_.n, head_out_.h, head_out_.w, head_out_.c);
  for (int n = 0; n < ghead.n; ++n) {
    const RawMaps& g = grad_maps[static_cast<std::size_t>(n)];
    if (g.h != ghead.h || g.w != ghead.w)
      throw std::invalid_argument("TrainContext::backward: grid mismatch");
    for (int y = 0; y < ghead.h; ++y)
      for (int x = 0; x < ghead.w; ++x) {
        float* p = ghead.at(n, y, x);
        std::size_t i = static_cast<std::size_t>(y) * g.w + x;
        p[0] = static_cast<float>(g.presence[i]);
        p[1] = static_cast<float>(g.bearing_a[i]);
        p[2] = static_cast<float>(g.bearing_b[i]);
        for (int k = 0; k < cfg.led_count; ++k)
          p[3 + k] = static_cast<float>(g.led_logits[static_cast<std::size_t>(k)][i]);
      }
  }

  std::vector<float> scratch, scratch2;
  const Tensor* head_in =
      pool_slot(cfg.blocks - 1) >= 0
          ? &pool_out_[static_cast<std::size_t>(pool_slot(cfg.blocks - 1))]
          : &block_out_[static_cast<std::size_t>(cfg.blocks - 1)];
  Tensor grad;
  conv_backward(model_.head, *head_in, ghead, &grad, scratch, scratch2);

  for (int i = cfg.blocks - 1; i >= 0; --i) {
    std::size_t bi = static_cast<std::size_t>(i);
    int p = pool_slot(i);
    if (p >= 0) {
      Tensor g2;
      maxpool_backward(block_out_[bi], grad, pool_idx_[static_cast<std::size_t>(p)], g2);
      grad = std::move(g2);
    }
    Tensor grelu, gbn;
    relu_backward(block_out_[bi], grad, grelu);
    bn_backward(model_.bns[bi], bn_in_[bi], bn_mean_[bi], bn_invstd_[bi], grelu, gbn);
    const Tensor* cin;
    if (i == 0) {
      cin = &input_;
    } else {
      int pp = pool_slot(i - 1);
      cin = pp >= 0 ? &pool_out_[static_cast<std::size_t>(pp)]
                    : &block_out_[static_cast<std::size_t>(i - 1)];
    }
    conv_backward(model_.convs[bi], *cin, gbn, i == 0 ? nullptr : &grad, scratch, scratch2);
  }
}

void zero_gradients(Model& model) {
  for (auto* g : gradient_arrays(model)) std::fill(g->begin(), g->end(), 0.0f);
}

Checkpoint snapshot(const Model& model) {
  Checkpoint ck;
  ck.cfg = model.cfg;
  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    ck.params.push_back(model.convs[i].w);
    ck.params.push_back(model.bns[i].gamma);
    ck.params.push_back(model.bns[i].beta);
    ck.params.push_back(model.bns[i].run_mean);
    ck.params.push_back(model.bns[i].run_var);
  }
  ck.params.push_back(model.head.w);
  ck.params.push_back(model.head.b);
  return ck;
}

void restore(Model& model, const Checkpoint& ckpt) {
  std::size_t idx = 0;
  auto take = [&](std::vector<float>& dst) {
    if (idx >= ckpt.params.size() || ckpt.params[idx].size() != dst.size())
      throw std::runtime_error("restore: checkpoint parameter shapes do not match model");
    dst = ckpt.params[idx++];
  };
  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    take(model.convs[i].w);
    take(model.bns[i].gamma);
    take(model.bns[i].beta);
    take(model.bns[i].run_mean);
    take(model.bns[i].run_var);
  }
  take(model.head.w);
  take(model.head.b);
  if (idx != ckpt.params.size())
    throw std::runtime_error("restore: trailing parameter arrays in checkpoint");
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m = build_model(ckpt.cfg, 0);
  restore(m, ckpt);
  return m;
}

namespace {

json config_to_json(const ModelConfig& cfg) {
  return json{{"input_width", cfg.input_width},
              {"input_height", cfg.input_height},
              {"blocks", cfg.blocks},
              {"channels", cfg.channels},
              {"downsample", cfg.downsample},
              {"receptive_field", cfg.receptive_field},
              {"led_count", cfg.led_count},
              {"scales", cfg.scales}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.input_width = j.at("input_width").get<int>();
  cfg.input_height = j.at("input_height").get<int>();
  cfg.blocks = j.at("blocks").get<int>();
  cfg.channels = j.at("channels").get<std::vector<int>>();
  cfg.downsample = j.at("downsample").get<int>();
  cfg.receptive_field = j.at("receptive_field").get<int>();
  cfg.led_count = j.at("led_count").get<int>();
  cfg.scales = j.at("scales").get<std::vector<double>>();
  return cfg;
}

constexpr char kMagic[8] = {'L', 'P', 'C', 'K', '0', '0', '0', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, sizeof(kMagic));
  json j;
  j["config"] = config_to_json(ckpt.cfg);
  std::vector<std::size_t> sizes;
  for (const auto& p : ckpt.params) sizes.push_back(p.size());
  j["array_sizes"] = sizes;
  j["meta_num"] = ckpt.meta_num;
  j["meta_str"] = ckpt.meta_str;
  std::string hdr = j.dump();
  std::uint64_t len = hdr.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& p : ckpt.params)
    f.write(reinterpret_cast<const char*>(p.data()),
            static_cast<std::streamsize>(p.size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || len > (1ull << 24)) throw std::runtime_error("load_checkpoint: bad header length");
  std::string hdr(len, '\0');
  f.read(hdr.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("load_checkpoint: truncated header");
  json j = json::parse(hdr);
  Checkpoint ck;
  ck.cfg = config_from_json(j.at("config"));
  if (j.contains("meta_num")) ck.meta_num = j.at("meta_num").get<std::map<std::string, double>>();
  if (j.contains("meta_str"))
    ck.meta_str = j.at("meta_str").get<std::map<std::string, std::string>>();
  for (std::size_t sz : j.at("array_sizes").get<std::vector<std::size_t>>()) {
    std::vector<float> arr(sz);
    f.read(reinterpret_cast<char*>(arr.data()),
           static_cast<std::streamsize>(sz * sizeof(float)));
    if (!f) throw std::runtime_error("load_checkpoint: truncated parameter array");
    ck.params.push_back(std::move(arr));
  }
  return ck;
}

std::vector<std::vector<float>*> parameter_arrays(Model& model) {
  std::vector<std::vector<float>*> out;
  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    out.push_back(&model.convs[i].w);
    out.push_back(&model.bns[i].gamma);
    out.push_back(&model.bns[i].beta);
  }
  out.push_back(&model.head.w);
  out.push_back(&model.head.b);
  return out;
}

std::vector<std::vector<float>*> gradient_arrays(Model& model) {
  std::vector<std::vector<float>*> out;
  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    out.push_back(&model.convs[i].gw);
    out.push_back(&model.bns[i].ggamma);
    out.push_back(&model.bns[i].gbeta);
  }
  out.push_back(&model.head.gw);
  out.push_back(&model.head.gb);
  return out;
}

}  // namespace ledpose
