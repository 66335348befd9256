#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "ledpose/calibrate.hpp"
#include "ledpose/training.hpp"

using namespace ledpose;
namespace fs = std::filesystem;

namespace {

constexpr double kLn2 = 0.6931471805599453;

SceneConfig tiny_scene() {
  SceneConfig scene;
  scene.intrinsics = {20.0, 20.0, 8.0, 8.0, 16, 16};
  scene.background = BackgroundStyle::flat;
  scene.dist_min = 0.5;
  scene.dist_max = 2.5;
  return scene;
}

const DatasetManifest& shared_manifest() {
  static DatasetManifest man = [] {
    std::string dir = "/tmp/ledpose_train_ds";
    fs::remove_all(dir);
    return generate_dataset(tiny_scene(), 200, 2024, dir);
  }();
  return man;
}

// Wider frames with per-frame LED resampling: enough independent label
// draws that split marginals pin near 0.5, and a grid whose cells differ.
const DatasetManifest& shared_manifest64() {
  static DatasetManifest man = [] {
    SceneConfig scene;
    scene.intrinsics = {60.0, 60.0, 32.0, 32.0, 64, 64};
    scene.background = BackgroundStyle::flat;
    scene.dist_min = 1.0;
    scene.dist_max = 3.0;
    scene.toggle_period = 1;
    std::string dir = "/tmp/ledpose_train_ds64";
    fs::remove_all(dir);
    return generate_dataset(scene, 1000, 555, dir);
  }();
  return man;
}

ModelConfig model_config64() {
  ModelConfig cfg;
  cfg.input_width = 64;
  cfg.input_height = 64;
  cfg.channels = {6, 8, 8, 8, 8, 8};
  cfg.led_count = 4;
  cfg.scales = {1.0, 0.5};
  return cfg;
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.input_width = 16;
  cfg.input_height = 16;
  cfg.channels = {4, 4, 4, 4, 4, 4};
  cfg.led_count = 4;
  cfg.scales = {1.0, 0.5};
  return cfg;
}

TrainConfig fast_train_config() {
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.sub_batch = 4;
  cfg.seed = 11;
  cfg.augment.enabled = false;
  return cfg;
}

double val_loss_of(const Model& model, Dataset& data) {
  const auto& idxs = data.split_indices("val");
  double total = 0.0;
  for (std::size_t idx : idxs) {
    LedStateVector labels;
    labels.states = data.leds(idx);
    total += multi_scale_loss(multi_scale_forward(model, data.image(idx)), labels).total;
  }
  return total / static_cast<double>(idxs.size());
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  TrainConfig cfg;
  cfg.epochs = 11;
  CHECK(lr_at(cfg, 0) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at(cfg, 10) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(cfg, 5) == doctest::Approx(5.5e-4).epsilon(1e-12));

  double prev = lr_at(cfg, 0);
  for (int e = 1; e < cfg.epochs; ++e) {
    double lr = lr_at(cfg, e);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }

  CHECK_THROWS_AS(lr_at(cfg, -1), std::out_of_range);
  CHECK_THROWS_AS(lr_at(cfg, 11), std::out_of_range);

  cfg.epochs = 1;
  CHECK(lr_at(cfg, 0) == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("early stopping picks the first strict minimum") {
  CHECK(early_stop_select({3.0, 2.0, 2.5}) == 1);
  CHECK(early_stop_select({2.0, 2.0, 3.0}) == 0);
  CHECK(early_stop_select({5.0, 4.0, 3.0}) == 2);
  CHECK(early_stop_select({1.0}) == 0);
  CHECK_THROWS_AS(early_stop_select({}), std::invalid_argument);
}

TEST_CASE("augmentation identity, determinism, and range") {
  AugmentParams params;
  Image img(24, 16);
  Rng fill = Rng::derive(3, "fill");
  for (float& v : img.data) v = static_cast<float>(fill.u01());

  AugmentParams off = params;
  off.enabled = false;
  Rng r0 = Rng::derive(4, "aug");
  Image same = augment(img, off, r0);
  CHECK(same.data == img.data);

  Rng r1 = Rng::derive(4, "aug");
  Rng r2 = Rng::derive(4, "aug");
  Image a = augment(img, params, r1);
  Image b = augment(img, params, r2);
  CHECK(a.data == b.data);
  CHECK(a.data != img.data);

  Rng sweep = Rng::derive(5, "sweep");
  for (int t = 0; t < 1000; ++t) {
    Image x(24, 16);
    for (float& v : x.data) v = static_cast<float>(sweep.u01());
    Image y = augment(x, params, sweep);
    for (float v : y.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("dataset accessors, pose guard, and label permutation") {
  Dataset data(shared_manifest(), true, false);
  REQUIRE(data.size() == 200);
  CHECK(data.split_indices("train").size() == 120);
  CHECK(data.split_indices("val").size() == 20);
  CHECK(data.split_indices("test").size() == 60);
  CHECK_THROWS_AS(data.split_indices("bogus"), std::invalid_argument);

  CHECK(data.leds(0) == shared_manifest().records[0].leds);
  CHECK(data.visible(5) == shared_manifest().records[5].visible);
  CHECK_THROWS_AS(data.pose(0), std::logic_error);
  CHECK(data.pose_reads() == 0);

  Image first = data.image(0);
  Image again = data.image(0);
  CHECK(first.data == again.data);
  CHECK(first.width == 16);
  CHECK(first.height == 16);

  Dataset posed(shared_manifest(), true, true);
  std::size_t vis = 0;
  while (!posed.visible(vis)) ++vis;
  Pose2D p = posed.pose(vis);
  CHECK(p.x == shared_manifest().records[vis].pose->x);
  CHECK(posed.pose_reads() == 1);
  std::size_t hidden = 0;
  while (posed.visible(hidden)) ++hidden;
  CHECK_THROWS_AS(posed.pose(hidden), std::invalid_argument);

  Dataset shuffled(shared_manifest(), true, false);
  shuffled.permute_labels(99);
  std::map<std::vector<std::uint8_t>, int> before, after;
  bool moved = false;
  for (std::size_t i : data.split_indices("train")) {
    ++before[data.leds(i)];
    ++after[shuffled.leds(i)];
    if (shuffled.leds(i) != data.leds(i)) moved = true;
  }
  CHECK(before == after);
  CHECK(moved);
  CHECK(shuffled.image(0).data == data.image(0).data);

  Dataset shuffled2(shared_manifest(), true, false);
  shuffled2.permute_labels(99);
  bool same_perm = true;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (shuffled2.leds(i) != shuffled.leds(i)) same_perm = false;
  CHECK(same_perm);
}

TEST_CASE("self-supervised training lowers the loss without reading poses") {
  Dataset data(shared_manifest(), true, false);
  Model model = build_model(tiny_model_config(), 21);
  TrainConfig cfg = fast_train_config();

  TrainHistory h = train(model, data, cfg);
  REQUIRE(h.train_loss.size() == 5);
  CHECK(h.train_loss.back() < h.train_loss.front());
  CHECK(h.pose_reads == 0);
  CHECK(data.pose_reads() == 0);
  CHECK(h.best_epoch >= 0);
  CHECK(h.best_val ==
        doctest::Approx(*std::min_element(h.val_loss.begin(), h.val_loss.end())).epsilon(1e-12));
  for (std::size_t e = 0; e < h.lr.size(); ++e)
    CHECK(h.lr[e] == doctest::Approx(lr_at(cfg, static_cast<int>(e))).epsilon(1e-15));

  // The returned model carries the best-validation parameters.
  CHECK(val_loss_of(model, data) == doctest::Approx(h.best_val).epsilon(1e-9));
}

TEST_CASE("training is deterministic given the seed") {
  TrainConfig cfg = fast_train_config();
  cfg.epochs = 2;

  Dataset data1(shared_manifest(), true, false);
  Model m1 = build_model(tiny_model_config(), 31);
  TrainHistory h1 = train(m1, data1, cfg);

  Dataset data2(shared_manifest(), true, false);
  Model m2 = build_model(tiny_model_config(), 31);
  TrainHistory h2 = train(m2, data2, cfg);

  CHECK(std::abs(h1.best_val - h2.best_val) < 1e-6);
  CHECK(h1.train_loss[0] == doctest::Approx(h2.train_loss[0]).epsilon(1e-9));
}

TEST_CASE("permuted labels hold validation near ln 2") {
  Dataset data(shared_manifest64(), true, false);
  data.permute_labels(77);
  Model model = build_model(model_config64(), 41);
  TrainConfig cfg = fast_train_config();
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.sub_batch = 8;

  TrainHistory h = train(model, data, cfg);
  CHECK(std::abs(h.best_val - kLn2) <= 0.05 * kLn2);
  CHECK(std::abs(h.val_loss.back() - kLn2) <= 0.05 * kLn2);
}

TEST_CASE("resume continues the schedule warm") {
  Dataset data(shared_manifest(), true, false);
  TrainConfig cfg = fast_train_config();
  cfg.epochs = 4;
  cfg.checkpoint_path = "/tmp/ledpose_resume_ckpt.bin";

  Model cold = build_model(tiny_model_config(), 51);
  TrainHistory first = train(cold, data, cfg);

  Model warm = model_from_checkpoint(load_checkpoint(cfg.checkpoint_path));
  std::remove(cfg.checkpoint_path.c_str());
  TrainConfig resume = cfg;
  resume.checkpoint_path.clear();
  resume.start_epoch = 1;
  Dataset data2(shared_manifest(), true, false);
  TrainHistory second = train(warm, data2, resume);

  REQUIRE(second.train_loss.size() == 3);
  CHECK(second.lr[0] == doctest::Approx(lr_at(cfg, 1)).epsilon(1e-15));
  CHECK(second.lr[2] == doctest::Approx(lr_at(cfg, 3)).epsilon(1e-15));
  CHECK(second.train_loss[0] < first.train_loss[0]);
}

TEST_CASE("train validates its configuration") {
  Dataset data(shared_manifest(), true, false);
  Model model = build_model(tiny_model_config(), 61);

  TrainConfig bad = fast_train_config();
  bad.epochs = 0;
  CHECK_THROWS_AS(train(model, data, bad), std::invalid_argument);

  bad = fast_train_config();
  bad.sub_batch = 16;
  bad.batch_size = 8;
  CHECK_THROWS_AS(train(model, data, bad), std::invalid_argument);

  bad = fast_train_config();
  bad.start_epoch = 5;
  CHECK_THROWS_AS(train(model, data, bad), std::invalid_argument);

  ModelConfig wrong_k = tiny_model_config();
  wrong_k.led_count = 2;
  Model mismatched = build_model(wrong_k, 62);
  TrainConfig one = fast_train_config();
  one.epochs = 1;
  CHECK_THROWS_AS(train(mismatched, data, one), std::invalid_argument);
}

TEST_CASE("supervised upperbound consumes poses and improves") {
  Dataset data(shared_manifest64(), true, true);
  Model model = build_model(model_config64(), 71);
  TrainConfig cfg = fast_train_config();
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.sub_batch = 8;

  const SceneConfig& scene = shared_manifest64().scene;
  Calibration cal = calibrate_from_rf_distance(model.cfg, scene.robot_size, scene.intrinsics.fx);
  TrainHistory h = train_supervised_upperbound(model, data, cfg, cal);
  REQUIRE(h.train_loss.size() == 3);
  CHECK(h.train_loss.back() < h.train_loss.front());
  CHECK(h.pose_reads > 0);

  Calibration mismatched;
  mismatched.d_c = 1.0;
  mismatched.f = {1.0};
  Model fresh = build_model(model_config64(), 72);
  CHECK_THROWS_AS(train_supervised_upperbound(fresh, data, cfg, mismatched),
                  std::invalid_argument);

  Dataset unposed(shared_manifest64(), true, false);
  Model fresh2 = build_model(model_config64(), 73);
  CHECK_THROWS_AS(train_supervised_upperbound(fresh2, unposed, cfg, cal), std::logic_error);
}
