#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "ledpose/network.hpp"
#include "ledpose/rng.hpp"

using namespace ledpose;

namespace {

Image random_image(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  Rng rng = Rng::derive(seed, "image");
  for (float& v : img.data) v = static_cast<float>(rng.u01());
  return img;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_width = 16;
  cfg.input_height = 16;
  cfg.channels = {4, 4, 4, 4, 4, 4};
  cfg.led_count = 2;
  cfg.scales = {1.0};
  return cfg;
}

void zero_parameters(Model& model) {
  for (std::vector<float>* arr : parameter_arrays(model))
    for (float& v : *arr) v = 0.0f;
}

bool maps_equal(const OutputMaps& a, const OutputMaps& b) {
  if (a.h != b.h || a.w != b.w || a.K() != b.K()) return false;
  for (std::size_t i = 0; i < a.presence.size(); ++i) {
    if (a.presence[i] != b.presence[i]) return false;
    if (a.bearing_c[i] != b.bearing_c[i]) return false;
    if (a.bearing_s[i] != b.bearing_s[i]) return false;
  }
  for (int k = 0; k < a.K(); ++k)
    for (std::size_t i = 0; i < a.presence.size(); ++i)
      if (a.led_logits[static_cast<std::size_t>(k)][i] !=
          b.led_logits[static_cast<std::size_t>(k)][i])
        return false;
  return true;
}

}  // namespace

TEST_CASE("output grids from floor halvings") {
  int gw = 0, gh = 0;
  output_grid(320, 176, 8, gw, gh);
  CHECK(gw == 40);
  CHECK(gh == 22);
  output_grid(640, 360, 8, gw, gh);
  CHECK(gw == 80);
  CHECK(gh == 45);
  output_grid(160, 88, 8, gw, gh);
  CHECK(gw == 20);
  CHECK(gh == 11);
  output_grid(80, 44, 8, gw, gh);
  CHECK(gw == 10);
  CHECK(gh == 5);
  output_grid(15, 9, 8, gw, gh);
  CHECK(gw == 1);
  CHECK(gh == 1);
}

TEST_CASE("parameter counts at both model sizes") {
  ModelConfig desk;
  Model m = build_model(desk, 7);
  CHECK(m.parameter_count() == 31379);
  CHECK(desk.head_channels() == 7);

  ModelConfig big;
  big.input_width = 640;
  big.input_height = 360;
  big.channels = {32, 48, 64, 72, 72, 72};
  Model p = build_model(big, 7);
  CHECK(p.parameter_count() == 178351);

  int gw = 0, gh = 0;
  output_grid(big.input_width, big.input_height, big.downsample, gw, gh);
  CHECK(gw == 80);
  CHECK(gh == 45);
}

TEST_CASE("build_model rejects invalid configs") {
  ModelConfig cfg;
  cfg.input_width = 321;
  CHECK_THROWS_AS(build_model(cfg, 1), std::invalid_argument);

  cfg = ModelConfig{};
  cfg.channels = {12, 16, 24};
  CHECK_THROWS_AS(build_model(cfg, 1), std::invalid_argument);

  cfg = ModelConfig{};
  cfg.scales = {0.5, 0.25};
  CHECK_THROWS_AS(build_model(cfg, 1), std::invalid_argument);

  cfg = ModelConfig{};
  cfg.scales = {1.0, 0.5, 0.5};
  CHECK_THROWS_AS(build_model(cfg, 1), std::invalid_argument);

  cfg = ModelConfig{};
  cfg.led_count = 0;
  CHECK_THROWS_AS(build_model(cfg, 1), std::invalid_argument);
}

TEST_CASE("initialization is deterministic in the seed") {
  ModelConfig cfg = tiny_config();
  Model a = build_model(cfg, 42);
  Model b = build_model(cfg, 42);
  Model c = build_model(cfg, 43);

  auto pa = parameter_arrays(a), pb = parameter_arrays(b), pc = parameter_arrays(c);
  REQUIRE(pa.size() == pb.size());
  bool same_seed_equal = true, diff_seed_equal = true;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (*pa[i] != *pb[i]) same_seed_equal = false;
    if (*pa[i] != *pc[i]) diff_seed_equal = false;
  }
  CHECK(same_seed_equal);
  CHECK_FALSE(diff_seed_equal);
}

TEST_CASE("zeroed parameters give 0.5 LED probabilities and a uniform stack") {
  ModelConfig cfg;
  Model model = build_model(cfg, 3);
  zero_parameters(model);

  Image img = random_image(320, 176, 4);
  MultiScaleStack st = multi_scale_forward(model, img);
  CHECK(st.h == 22);
  CHECK(st.w == 40);
  CHECK(st.S() == 3);
  CHECK(st.K == 4);

  double n = 3.0 * 22 * 40;
  double total = 0.0;
  for (int s = 0; s < st.S(); ++s)
    for (int i = 0; i < st.cells(); ++i) {
      std::size_t ss = static_cast<std::size_t>(s), ii = static_cast<std::size_t>(i);
      CHECK(st.p_ms_norm[ss][ii] == doctest::Approx(1.0 / n).epsilon(1e-9));
      CHECK(st.bearing_c[ss][ii] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(st.bearing_s[ss][ii] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
      total += st.p_ms_norm[ss][ii];
      for (int k = 0; k < st.K; ++k) {
        double z = st.led_logits[ss][static_cast<std::size_t>(k)][ii];
        CHECK(1.0 / (1.0 + std::exp(-z)) == doctest::Approx(0.5).epsilon(1e-12));
      }
    }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("eval forward is deterministic and input-dependent") {
  ModelConfig cfg = tiny_config();
  Model model = build_model(cfg, 11);
  Image img = random_image(16, 16, 12);

  OutputMaps a = forward(model, img);
  OutputMaps b = forward(model, img);
  CHECK(maps_equal(a, b));

  Image other = img;
  other.px(8, 8)[1] += 0.25f;
  OutputMaps c = forward(model, other);
  CHECK_FALSE(maps_equal(a, c));
}

TEST_CASE("stack normalization sums to one on a random model") {
  ModelConfig cfg;
  Model model = build_model(cfg, 21);
  Image img = random_image(320, 176, 22);
  MultiScaleStack st = multi_scale_forward(model, img);
  double total = 0.0;
  for (const auto& m : st.p_ms_norm)
    for (double v : m) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("forward rejects images below one output cell") {
  Model model = build_model(tiny_config(), 5);
  Image img = random_image(4, 4, 6);
  CHECK_THROWS_AS(forward(model, img), std::invalid_argument);
}

TEST_CASE("a far-away pixel cannot influence a cell") {
  ModelConfig cfg = tiny_config();
  cfg.input_width = 160;
  cfg.input_height = 96;
  Model model = build_model(cfg, 31);
  Image img = random_image(160, 96, 32);

  OutputMaps base = forward(model, img);
  REQUIRE(base.w == 20);
  REQUIRE(base.h == 12);

  Image far = img;
  far.px(150, 90)[0] += 0.37f;
  OutputMaps pert = forward(model, far);

  std::size_t cell = 1 * 20 + 1;  // receptive field ends well before x=150
  CHECK(pert.presence[cell] == base.presence[cell]);
  CHECK(pert.bearing_c[cell] == base.bearing_c[cell]);
  CHECK(pert.bearing_s[cell] == base.bearing_s[cell]);
  for (int k = 0; k < base.K(); ++k)
    CHECK(pert.led_logits[static_cast<std::size_t>(k)][cell] ==
          base.led_logits[static_cast<std::size_t>(k)][cell]);

  std::size_t near = 11 * 20 + 18;
  CHECK(pert.presence[near] != base.presence[near]);

  Image close = img;
  close.px(12, 12)[0] += 0.37f;
  OutputMaps pert2 = forward(model, close);
  CHECK(pert2.presence[cell] != base.presence[cell]);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ModelConfig cfg = tiny_config();
  Model model = build_model(cfg, 51);

  Checkpoint ck = snapshot(model);
  ck.meta_num["epoch"] = 7.0;
  ck.meta_num["val_loss"] = 0.3125;
  ck.meta_str["phase"] = "selfsup";

  std::string path = "/tmp/ledpose_test_ckpt.bin";
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(back.cfg.input_width == cfg.input_width);
  CHECK(back.cfg.channels == cfg.channels);
  CHECK(back.cfg.led_count == cfg.led_count);
  CHECK(back.cfg.scales == cfg.scales);
  CHECK(back.meta_num.at("epoch") == 7.0);
  CHECK(back.meta_num.at("val_loss") == 0.3125);
  CHECK(back.meta_str.at("phase") == "selfsup");
  REQUIRE(back.params.size() == ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) CHECK(back.params[i] == ck.params[i]);

  Model rebuilt = model_from_checkpoint(back);
  Image img = random_image(16, 16, 52);
  CHECK(maps_equal(forward(model, img), forward(rebuilt, img)));

  Model fresh = build_model(cfg, 99);
  restore(fresh, back);
  CHECK(maps_equal(forward(model, img), forward(fresh, img)));
}

TEST_CASE("restore rejects mismatched shapes") {
  Model model = build_model(tiny_config(), 61);
  Checkpoint ck = snapshot(model);
  ModelConfig other = tiny_config();
  other.channels = {4, 4, 4, 4, 4, 8};
  Model wrong = build_model(other, 62);
  CHECK_THROWS_AS(restore(wrong, ck), std::runtime_error);
}

TEST_CASE("image_to_tensor zero-centers intensities") {
  Image img(8, 8, 0.75f);
  Tensor t = image_to_tensor(img);
  CHECK(t.n == 1);
  CHECK(t.h == 8);
  CHECK(t.w == 8);
  CHECK(t.c == 3);
  for (float v : t.data) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));

  std::vector<Image> pair = {img, Image(8, 8, 0.25f)};
  Tensor tb = images_to_tensor(pair);
  CHECK(tb.n == 2);
  CHECK(tb.data[0] == doctest::Approx(0.25f).epsilon(1e-6));
  CHECK(tb.data[8 * 8 * 3] == doctest::Approx(-0.25f).epsilon(1e-6));

  CHECK_THROWS_AS(images_to_tensor({img, Image(4, 4)}), std::invalid_argument);
}

TEST_CASE("training backward matches finite differences") {
  ModelConfig cfg = tiny_config();
  Model model = build_model(cfg, 71);
  TrainContext ctx(model);

  std::vector<Image> batch = {random_image(16, 16, 72), random_image(16, 16, 73)};
  Tensor input = images_to_tensor(batch);

  // Fixed random linear loss over every raw map entry.
  Rng wrng = Rng::derive(74, "weights");
  auto loss_of = [&](const std::vector<RawMaps>& maps) {
    Rng r = Rng::derive(74, "weights");
    double acc = 0.0;
    for (const RawMaps& m : maps) {
      for (double v : m.presence) acc += r.uniform(-1.0, 1.0) * v;
      for (double v : m.bearing_a) acc += r.uniform(-1.0, 1.0) * v;
      for (double v : m.bearing_b) acc += r.uniform(-1.0, 1.0) * v;
      for (const auto& lk : m.led_logits)
        for (double v : lk) acc += r.uniform(-1.0, 1.0) * v;
    }
    return acc;
  };
  (void)wrng;

  std::vector<RawMaps> maps = ctx.forward_train(input, 1.0);
  std::vector<RawMaps> grads = maps;
  {
    Rng r = Rng::derive(74, "weights");
    for (RawMaps& m : grads) {
      for (double& v : m.presence) v = r.uniform(-1.0, 1.0);
      for (double& v : m.bearing_a) v = r.uniform(-1.0, 1.0);
      for (double& v : m.bearing_b) v = r.uniform(-1.0, 1.0);
      for (auto& lk : m.led_logits)
        for (double& v : lk) v = r.uniform(-1.0, 1.0);
    }
  }
  zero_gradients(model);
  ctx.backward(grads);

  auto params = parameter_arrays(model);
  auto pgrads = gradient_arrays(model);
  REQUIRE(params.size() == pgrads.size());

  Rng pick = Rng::derive(75, "pick");
  int checked = 0;
  for (int trial = 0; trial < 24; ++trial) {
    std::size_t ai = pick.uniform_int(params.size());
    if (params[ai]->empty()) continue;
    std::size_t pi = pick.uniform_int(params[ai]->size());
    float saved = (*params[ai])[pi];
    double h = 2e-3;

    (*params[ai])[pi] = saved + static_cast<float>(h);
    double up = loss_of(ctx.forward_train(input, 1.0));
    (*params[ai])[pi] = saved - static_cast<float>(h);
    double dn = loss_of(ctx.forward_train(input, 1.0));
    (*params[ai])[pi] = saved;

    double fd = (up - dn) / (2.0 * h);
    double an = (*pgrads[ai])[pi];
    if (std::abs(fd) < 0.05 && std::abs(an) < 0.05) continue;
    CHECK(an == doctest::Approx(fd).epsilon(0.08).scale(0.05));
    ++checked;
  }
  CHECK(checked >= 8);
}
