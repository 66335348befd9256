#include "ledpose/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ledpose {

namespace {

struct GroundTruth {
  double u, v, d;
  double pos_x, pos_y;
  double psi;
};

GroundTruth ground_truth(const Pose2D& pose, const SceneConfig& scene) {
  if (!(pose.x > 0.0)) throw std::invalid_argument("evaluate: ground-truth pose behind camera");
  const CameraIntrinsics& intr = scene.intrinsics;
  double h = scene.camera_height;
  GroundTruth gt;
  gt.u = intr.cx + intr.fx * pose.y / pose.x;
  gt.v = intr.cy + intr.fy * h / pose.x;
  gt.d = std::sqrt(pose.x * pose.x + pose.y * pose.y + h * h);
  gt.pos_x = pose.x;
  gt.pos_y = pose.y;
  gt.psi = pose.psi;
  return gt;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::size_t> split_records(const DatasetManifest& manifest, const std::string& split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    if (manifest.records[i].split == split) out.push_back(i);
  if (out.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
  return out;
}

Image load_frame(const DatasetManifest& manifest, const ManifestRecord& rec) {
  namespace fs = std::filesystem;
  return read_png((fs::path(manifest.root_dir) / rec.image).string());
}

MetricsReport finalize_report(std::vector<double>& e_uv, std::vector<double>& e_psi,
                              std::vector<double>& e_d,
                              std::vector<std::pair<double, double>>& gamma_pairs,
                              double auc_led) {
  MetricsReport rep;
  rep.n_samples = static_cast<long>(e_uv.size());
  rep.e_uv = median(e_uv);
  rep.e_psi = median(e_psi);
  rep.e_d = e_d.empty() ? 0.0
                        : std::accumulate(e_d.begin(), e_d.end(), 0.0) /
                              static_cast<double>(e_d.size());
  rep.auc_led = auc_led;
  rep.gamma = gamma_pairs.empty()
                  ? 0.0
                  : pose_accuracy_gamma(gamma_pairs, kGammaPosThresh, kGammaAngThresh);
  return rep;
}

}  // namespace

double auc_binary(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc_binary: scores and labels differ in length");
  if (scores.empty()) throw std::invalid_argument("auc_binary: empty input");

  std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks across ties, then the Mann-Whitney rank-sum statistic.
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  double pos_rank_sum = 0.0;
  long n_pos = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k]) {
      pos_rank_sum += rank[k];
      ++n_pos;
    }
  long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc_binary: both classes must be present");

  double u_stat = pos_rank_sum - 0.5 * static_cast<double>(n_pos) *
                                     (static_cast<double>(n_pos) + 1.0);
  return u_stat / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport evaluate(const Model& model, const DatasetManifest& manifest,
                       const Calibration& calibration, const std::string& split) {
  if (!calibration.valid()) throw std::invalid_argument("evaluate: invalid calibration");
  const SceneConfig& scene = manifest.scene;
  int K = scene.led_config.count;

  std::vector<double> e_uv, e_psi, e_d;
  std::vector<std::pair<double, double>> gamma_pairs;
  std::vector<std::vector<double>> led_scores(static_cast<std::size_t>(K));
  std::vector<std::vector<std::uint8_t>> led_labels(static_cast<std::size_t>(K));

  for (std::size_t i : split_records(manifest, split)) {
    const ManifestRecord& rec = manifest.records[i];
    if (!rec.visible || !rec.pose) continue;
    GroundTruth gt = ground_truth(*rec.pose, scene);

    Image img = load_frame(manifest, rec);
    PoseEstimate est = estimate_pose(model, img, calibration, scene.intrinsics);

    e_uv.push_back(std::hypot(est.u - gt.u, est.v - gt.v));
    e_psi.push_back(circular_error(gt.psi, est.psi));
    e_d.push_back(std::abs(gt.d - est.d) / gt.d);
    gamma_pairs.emplace_back(std::hypot(est.pose.x - gt.pos_x, est.pose.y - gt.pos_y),
                             circular_error(gt.psi, est.psi));

    std::vector<double> w = led_visibility_oracle(gt.psi, scene.led_config);
    for (int k = 0; k < K; ++k) {
      if (w[static_cast<std::size_t>(k)] <= 0.0) continue;
      led_scores[static_cast<std::size_t>(k)].push_back(
          est.led_probs[static_cast<std::size_t>(k)]);
      led_labels[static_cast<std::size_t>(k)].push_back(
          rec.leds[static_cast<std::size_t>(k)]);
    }
  }

  double auc_sum = 0.0;
  int auc_count = 0;
  for (int k = 0; k < K; ++k) {
    const std::vector<std::uint8_t>& lab = led_labels[static_cast<std::size_t>(k)];
    if (lab.empty()) continue;
    bool has_pos = std::find(lab.begin(), lab.end(), 1) != lab.end();
    bool has_neg = std::find(lab.begin(), lab.end(), 0) != lab.end();
    if (!has_pos || !has_neg) continue;
    auc_sum += auc_binary(led_scores[static_cast<std::size_t>(k)], lab);
    ++auc_count;
  }
  double auc_led = auc_count > 0 ? auc_sum / auc_count : 0.5;

  return finalize_report(e_uv, e_psi, e_d, gamma_pairs, auc_led);
}

DetectionReport evaluate_detection(const Model& model, const DatasetManifest& manifest,
                                   const std::string& split) {
  std::vector<double> score_max, score_entropy;
  std::vector<std::uint8_t> labels;
  DetectionReport rep;

  for (std::size_t i : split_records(manifest, split)) {
    const ManifestRecord& rec = manifest.records[i];
    Image img = load_frame(manifest, rec);
    MultiScaleStack stack = multi_scale_forward(model, img);
    score_max.push_back(detect_presence_max(stack).score);
    score_entropy.push_back(detect_presence_entropy(read_led_states(stack)));
    labels.push_back(rec.visible ? 1 : 0);
    if (rec.visible)
      ++rep.n_positive;
    else
      ++rep.n_negative;
  }

  rep.auc_max = auc_binary(score_max, labels);
  rep.auc_entropy = auc_binary(score_entropy, labels);
  return rep;
}

Pose2D mean_predictor(const DatasetManifest& manifest, const std::string& split) {
  double sx = 0.0, sy = 0.0, sc = 0.0, ss = 0.0;
  long n = 0;
  for (std::size_t i : split_records(manifest, split)) {
    const ManifestRecord& rec = manifest.records[i];
    if (!rec.visible || !rec.pose) continue;
    sx += rec.pose->x;
    sy += rec.pose->y;
    sc += std::cos(rec.pose->psi);
    ss += std::sin(rec.pose->psi);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_predictor: no visible poses in split");
  Pose2D p;
  p.x = sx / static_cast<double>(n);
  p.y = sy / static_cast<double>(n);
  p.psi = std::hypot(sc, ss) < 1e-12 ? 0.0 : wrap_angle(std::atan2(ss, sc));
  return p;
}

MetricsReport evaluate_constant_pose(const DatasetManifest& manifest, const Pose2D& pose,
                                     const std::string& split) {
  const SceneConfig& scene = manifest.scene;
  GroundTruth pred = ground_truth(pose, scene);

  std::vector<double> e_uv, e_psi, e_d;
  std::vector<std::pair<double, double>> gamma_pairs;
  for (std::size_t i : split_records(manifest, split)) {
    const ManifestRecord& rec = manifest.records[i];
    if (!rec.visible || !rec.pose) continue;
    GroundTruth gt = ground_truth(*rec.pose, scene);
    e_uv.push_back(std::hypot(pred.u - gt.u, pred.v - gt.v));
    e_psi.push_back(circular_error(gt.psi, pose.psi));
    e_d.push_back(std::abs(gt.d - pred.d) / gt.d);
    gamma_pairs.emplace_back(std::hypot(pose.x - gt.pos_x, pose.y - gt.pos_y),
                             circular_error(gt.psi, pose.psi));
  }
  return finalize_report(e_uv, e_psi, e_d, gamma_pairs, 0.5);
}

void save_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_report: cannot open " + path);
  char buf[64];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << key << " " << buf << "\n";
  };
  line("e_uv", report.e_uv);
  line("e_psi", report.e_psi);
  line("e_d", report.e_d);
  line("auc_led", report.auc_led);
  line("gamma", report.gamma);
  out << "n_samples " << report.n_samples << "\n";
  if (!out) throw std::runtime_error("save_report: write failed");
}

MetricsReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_report: cannot open " + path);
  MetricsReport rep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "e_uv")
      ss >> rep.e_uv;
    else if (key == "e_psi")
      ss >> rep.e_psi;
    else if (key == "e_d")
      ss >> rep.e_d;
    else if (key == "auc_led")
      ss >> rep.auc_led;
    else if (key == "gamma")
      ss >> rep.gamma;
    else if (key == "n_samples")
      ss >> rep.n_samples;
    else
      throw std::runtime_error("load_report: unknown key '" + key + "'");
    if (ss.fail()) throw std::runtime_error("load_report: malformed line in " + path);
  }
  return rep;
}

}  // namespace ledpose
