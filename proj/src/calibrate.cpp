#include "ledpose/calibrate.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ledpose {

Calibration default_calibration(const ModelConfig& cfg) {
  Calibration c;
  c.f = cfg.scales;
  c.d_c = 1.0;
  c.rf = cfg.receptive_field;
  return c;
}

CalibrationResult calibrate_from_image(const Model& model, const Image& image,
                                       double known_distance, double min_presence) {
  if (!(known_distance > 0.0))
    throw std::invalid_argument("calibrate_from_image: known_distance must be positive");

  MultiScaleStack stack = multi_scale_forward(model, image);
  PresenceScore presence = detect_presence_max(stack);
  if (presence.score < min_presence) {
    char msg[128];
    std::snprintf(msg, sizeof(msg),
                  "calibrate_from_image: presence score %.4f below threshold %.4f",
                  presence.score, min_presence);
    throw std::runtime_error(msg);
  }

  Calibration unit = default_calibration(model.cfg);
  double multiplier = estimate_distance(stack, unit);
  if (!(multiplier > 0.0))
    throw std::runtime_error("calibrate_from_image: degenerate scale mass distribution");

  CalibrationResult result;
  result.calibration = unit;
  result.calibration.d_c = known_distance / multiplier;
  result.presence_score = presence.score;
  result.multiplier = multiplier;
  return result;
}

Calibration calibrate_from_rf_distance(const ModelConfig& cfg, double robot_size, double fx) {
  if (!(robot_size > 0.0) || !(fx > 0.0))
    throw std::invalid_argument("calibrate_from_rf_distance: robot_size and fx must be positive");
  if (cfg.receptive_field <= 0)
    throw std::invalid_argument("calibrate_from_rf_distance: receptive field must be positive");
  Calibration c = default_calibration(cfg);
  c.d_c = robot_size * fx / cfg.receptive_field;
  return c;
}

void save_calibration(const Calibration& calibration, const std::string& path) {
  if (!calibration.valid()) throw std::invalid_argument("save_calibration: invalid calibration");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_calibration: cannot open " + path);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", calibration.d_c);
  out << "d_c " << buf << "\n";
  out << "rf " << calibration.rf << "\n";
  out << "f";
  for (double v : calibration.f) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << " " << buf;
  }
  out << "\n";
  if (!out) throw std::runtime_error("save_calibration: write failed");
}

Calibration load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_calibration: cannot open " + path);
  Calibration c;
  c.f.clear();
  bool have_dc = false, have_f = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "d_c") {
      ss >> c.d_c;
      have_dc = true;
    } else if (key == "rf") {
      ss >> c.rf;
    } else if (key == "f") {
      double v;
      while (ss >> v) c.f.push_back(v);
      have_f = true;
    } else {
      throw std::runtime_error("load_calibration: unknown key '" + key + "' in " + path);
    }
    if (ss.fail() && !ss.eof())
      throw std::runtime_error("load_calibration: malformed line in " + path);
  }
  if (!have_dc || !have_f || !c.valid())
    throw std::runtime_error("load_calibration: incomplete record in " + path);
  return c;
}

}  // namespace ledpose
