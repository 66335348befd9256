#include "ledpose/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ledpose {

namespace {

using nlohmann::json;

struct Vec3 {
  double x, y, z;
};

struct P2 {
  double u, v;
};

P2 project(const CameraIntrinsics& intr, const Vec3& p) {
  return {intr.cx + intr.fx * p.y / p.x, intr.cy - intr.fy * p.z / p.x};
}

// Andrew monotone chain; returns hull in counter-clockwise order.
std::vector<P2> convex_hull(std::vector<P2> pts) {
  std::sort(pts.begin(), pts.end(), [](const P2& a, const P2& b) {
    return a.u < b.u || (a.u == b.u && a.v < b.v);
  });
  auto cross = [](const P2& o, const P2& a, const P2& b) {
    return (a.u - o.u) * (b.v - o.v) - (a.v - o.v) * (b.u - o.u);
  };
  std::vector<P2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  std::size_t lower = k + 1;
  for (std::size_t i = pts.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k > 0 ? k - 1 : 0);
  return hull;
}

void fill_hull(Image& img, const std::vector<P2>& hull, const float color[3], float noise,
               Rng& rng) {
  if (hull.size() < 3) return;
  double vmin = hull[0].v, vmax = hull[0].v;
  for (const P2& p : hull) {
    vmin = std::min(vmin, p.v);
    vmax = std::max(vmax, p.v);
  }
  int y0 = std::max(0, static_cast<int>(std::floor(vmin)));
  int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(vmax)));
  for (int y = y0; y <= y1; ++y) {
    double yc = y + 0.5;
    double xmin = 1e18, xmax = -1e18;
    for (std::size_t i = 0; i < hull.size(); ++i) {
      const P2& a = hull[i];
      const P2& b = hull[(i + 1) % hull.size()];
      if ((a.v <= yc && b.v > yc) || (b.v <= yc && a.v > yc)) {
        double t = (yc - a.v) / (b.v - a.v);
        double xi = a.u + t * (b.u - a.u);
        xmin = std::min(xmin, xi);
        xmax = std::max(xmax, xi);
      }
    }
    if (xmin > xmax) continue;
    int x0 = std::max(0, static_cast<int>(std::floor(xmin + 0.5)));
    int x1 = std::min(img.width - 1, static_cast<int>(std::floor(xmax - 0.5)));
    for (int x = x0; x <= x1; ++x) {
      float* px = img.px(x, y);
      for (int c = 0; c < 3; ++c) {
        float v = color[c] + noise * static_cast<float>(rng.normal());
        px[c] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
}

void draw_blob(Image& img, double cu, double cv, double radius, const float color[3],
               double strength) {
  double sigma = std::max(0.7, radius / 1.6);
  int ext = static_cast<int>(std::ceil(2.7 * sigma));
  int x0 = std::max(0, static_cast<int>(cu) - ext);
  int x1 = std::min(img.width - 1, static_cast<int>(cu) + ext);
  int y0 = std::max(0, static_cast<int>(cv) - ext);
  int y1 = std::min(img.height - 1, static_cast<int>(cv) + ext);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dx = x + 0.5 - cu, dy = y + 0.5 - cv;
      double a = strength * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      if (a < 0.004) continue;
      float* px = img.px(x, y);
      for (int c = 0; c < 3; ++c)
        px[c] = std::clamp(px[c] + static_cast<float>(a) * (color[c] - px[c]), 0.0f, 1.0f);
    }
}

void domain_palette(int domain_id, float base0[3], float base1[3]) {
  Rng rng = Rng::derive(static_cast<std::uint64_t>(domain_id) + 11, "domain.palette");
  for (int c = 0; c < 3; ++c) {
    base0[c] = static_cast<float>(0.25 + 0.35 * rng.u01());
    base1[c] = static_cast<float>(0.35 + 0.45 * rng.u01());
  }
}

void add_clutter(Image& img, Rng& rng, int count) {
  for (int i = 0; i < count; ++i) {
    bool ellipse = rng.bernoulli(0.5);
    float col[3];
    for (int c = 0; c < 3; ++c) col[c] = static_cast<float>(0.08 + 0.72 * rng.u01());
    double cx = rng.uniform(0.0, img.width);
    double cy = rng.uniform(0.0, img.height);
    double a = rng.uniform(0.04, 0.35) * img.width;
    double b = rng.uniform(0.04, 0.35) * img.height;
    int x0 = std::max(0, static_cast<int>(cx - a));
    int x1 = std::min(img.width - 1, static_cast<int>(cx + a));
    int y0 = std::max(0, static_cast<int>(cy - b));
    int y1 = std::min(img.height - 1, static_cast<int>(cy + b));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (ellipse) {
          double nx = (x + 0.5 - cx) / a, ny = (y + 0.5 - cy) / b;
          if (nx * nx + ny * ny > 1.0) continue;
        }
        float* px = img.px(x, y);
        for (int c = 0; c < 3; ++c) px[c] = 0.25f * px[c] + 0.75f * col[c];
      }
  }
}

double robot_depth_x(const Pose2D& pose) { return pose.x; }

}  // namespace

std::vector<double> led_visibility_oracle(double psi, const LedConfiguration& cfg) {
  if (cfg.count < 1) throw std::invalid_argument("led_visibility_oracle: K must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(cfg.count));
  double total = 0.0;
  for (int k = 0; k < cfg.count; ++k) {
    double v = std::cos(psi + cfg.mount_bearing(k));
    w[static_cast<std::size_t>(k)] = v > 0.0 ? v : 0.0;
    total += w[static_cast<std::size_t>(k)];
  }
  if (total <= 0.0) {
    // Unreachable for K >= 3; degenerate angles for tiny K fall back to uniform.
    for (double& v : w) v = 1.0 / cfg.count;
    return w;
  }
  for (double& v : w) v /= total;
  return w;
}

Image render_background(const SceneConfig& scene, Rng& rng) {
  const CameraIntrinsics& intr = scene.intrinsics;
  Image img(intr.width, intr.height);
  float base0[3], base1[3];
  domain_palette(scene.domain_id, base0, base1);
  float jitter[3];
  for (int c = 0; c < 3; ++c) jitter[c] = static_cast<float>(rng.uniform(-0.05, 0.05));

  if (scene.background == BackgroundStyle::textured) {
    std::vector<float> field =
        smooth_noise_field(intr.width, intr.height, 48, 2, rng);
    for (int y = 0; y < intr.height; ++y)
      for (int x = 0; x < intr.width; ++x) {
        float t = 0.5f * (field[static_cast<std::size_t>(y) * intr.width + x] + 1.0f);
        float* px = img.px(x, y);
        for (int c = 0; c < 3; ++c)
          px[c] = std::clamp((1 - t) * base0[c] + t * base1[c] + jitter[c], 0.0f, 1.0f);
      }
  } else {
    for (int y = 0; y < intr.height; ++y)
      for (int x = 0; x < intr.width; ++x) {
        float* px = img.px(x, y);
        for (int c = 0; c < 3; ++c) px[c] = std::clamp(base0[c] + jitter[c], 0.0f, 1.0f);
      }
  }
  if (scene.background != BackgroundStyle::flat)
    add_clutter(img, rng, 4 + static_cast<int>(rng.uniform_int(8)));

  for (float& v : img.data) {
    v += 0.01f * static_cast<float>(rng.normal());
    v = std::clamp(v, 0.0f, 1.0f);
  }
  return img;
}

void render_robot(Image& img, const SceneConfig& scene, const Pose2D& pose,
                  const LedStateVector& leds, Rng& rng) {
  const CameraIntrinsics& intr = scene.intrinsics;
  if (pose.x <= 0.05) return;
  double phi = std::atan2(pose.y, pose.x);
  double theta = pose.psi + phi - kPi;
  double zc = -scene.camera_height;
  double half = 0.5 * scene.robot_size;
  double zlo = zc - 0.4 * scene.robot_height;
  double zhi = zc + 0.6 * scene.robot_height;

  std::vector<P2> corners;
  double fwd[2] = {std::cos(theta), std::sin(theta)};
  double left[2] = {-fwd[1], fwd[0]};
  for (int sa : {-1, 1})
    for (int sb : {-1, 1})
      for (double z : {zlo, zhi}) {
        Vec3 p{pose.x + half * (sa * fwd[0] + sb * left[0]),
               pose.y + half * (sa * fwd[1] + sb * left[1]), z};
        if (p.x < 0.05) continue;
        corners.push_back(project(intr, p));
      }
  if (corners.size() < 3) return;

  float body[3];
  float tone = static_cast<float>(0.16 + 0.14 * rng.u01());
  for (int c = 0; c < 3; ++c)
    body[c] = std::clamp(tone + static_cast<float>(rng.uniform(-0.03, 0.03)), 0.0f, 1.0f);
  fill_hull(img, convex_hull(corners), body, 0.015f, rng);

  std::vector<double> weights = led_visibility_oracle(pose.psi, scene.led_config);
  const float on_color[3] = {1.0f, 0.97f, 0.85f};
  const float off_color[3] = {0.05f, 0.05f, 0.06f};
  for (int k = 0; k < scene.led_config.count; ++k) {
    double w = weights[static_cast<std::size_t>(k)];
    if (w <= 0.0) continue;
    double ang = theta + scene.led_config.mount_bearing(k);
    Vec3 p{pose.x + half * std::cos(ang), pose.y + half * std::sin(ang), zc};
    if (p.x < 0.05) continue;
    P2 q = project(intr, p);
    double radius = 0.5 * scene.led_size * intr.fx / p.x;
    if (leds.on(k))
      draw_blob(img, q.u, q.v, radius, on_color, 0.55 + 0.45 * w);
    else
      draw_blob(img, q.u, q.v, radius, off_color, 0.65 + 0.25 * w);
  }
}

Sample render_frame(const SceneConfig& scene, const Pose2D& pose, const LedStateVector& leds,
                    Rng& rng) {
  validate_intrinsics(scene.intrinsics);
  if (leds.size() != scene.led_config.count)
    throw std::invalid_argument("render_frame: LED vector length mismatch");
  Sample s;
  s.led_states = leds;
  s.image = render_background(scene, rng);

  const CameraIntrinsics& intr = scene.intrinsics;
  bool in_view = false;
  if (pose.x > 0.05) {
    double u = intr.cx + intr.fx * pose.y / pose.x;
    double v = intr.cy + intr.fy * scene.camera_height / pose.x;
    double half_px = 0.5 * scene.robot_size * intr.fx / pose.x;
    in_view = u + half_px > 0.0 && u - half_px < intr.width && v + half_px > 0.0 &&
              v - half_px < intr.height;
  }
  if (in_view) {
    render_robot(s.image, scene, pose, leds, rng);
    s.gt_pose = pose;
    s.gt_pose.psi = wrap_angle(pose.psi);
    s.visible = true;
  }
  return s;
}

Image render_two_robot_frame(const SceneConfig& scene, const Pose2D& pose_a,
                             const LedStateVector& leds_a, const Pose2D& pose_b,
                             const LedStateVector& leds_b, Rng& rng) {
  Image img = render_background(scene, rng);
  if (robot_depth_x(pose_a) >= robot_depth_x(pose_b)) {
    render_robot(img, scene, pose_a, leds_a, rng);
    render_robot(img, scene, pose_b, leds_b, rng);
  } else {
    render_robot(img, scene, pose_b, leds_b, rng);
    render_robot(img, scene, pose_a, leds_a, rng);
  }
  return img;
}

Pose2D sample_pose(const SceneConfig& scene, Rng& rng) {
  const CameraIntrinsics& intr = scene.intrinsics;
  double d = rng.uniform(scene.dist_min, scene.dist_max);
  double u;
  if (rng.bernoulli(scene.boundary_fraction)) {
    double band = 0.12 * intr.width;
    u = rng.bernoulli(0.5) ? rng.uniform(-0.04 * intr.width, band)
                           : rng.uniform(intr.width - band, 1.04 * intr.width);
  } else {
    u = rng.uniform(0.12 * intr.width, 0.88 * intr.width);
  }
  double t = (u - intr.cx) / intr.fx;
  double h = scene.camera_height;
  double planar = std::sqrt(std::max(1e-9, d * d - h * h));
  Pose2D p;
  p.x = planar / std::sqrt(1.0 + t * t);
  p.y = t * p.x;
  p.psi = wrap_angle(rng.uniform(-kPi, kPi));
  return p;
}

namespace {

LedStateVector led_states_for_frame(const SceneConfig& scene, std::uint64_t seed, long frame) {
  long block = frame / std::max(1, scene.toggle_period);
  Rng rng = Rng::derive(seed, "led.block", static_cast<std::uint64_t>(block));
  LedStateVector v;
  v.states.resize(static_cast<std::size_t>(scene.led_config.count));
  for (auto& s : v.states) s = rng.bernoulli(scene.led_on_prob) ? 1 : 0;
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string record_to_line(const ManifestRecord& r) {
  std::string line = "{\"frame_id\": " + std::to_string(r.frame_id) + ", \"image\": \"" +
                     r.image + "\", \"leds\": [";
  for (std::size_t k = 0; k < r.leds.size(); ++k) {
    if (k) line += ", ";
    line += r.leds[k] ? '1' : '0';
  }
  line += "], \"visible\": ";
  line += r.visible ? '1' : '0';
  line += ", \"pose\": ";
  if (r.pose) {
    line += "[" + format_double(r.pose->x) + ", " + format_double(r.pose->y) + ", " +
            format_double(r.pose->psi) + "]";
  } else {
    line += "null";
  }
  line += ", \"split\": \"" + r.split + "\"}";
  return line;
}

const char* style_name(BackgroundStyle s) {
  switch (s) {
    case BackgroundStyle::flat: return "flat";
    case BackgroundStyle::clutter: return "clutter";
    case BackgroundStyle::textured: return "textured";
  }
  return "clutter";
}

BackgroundStyle style_from_name(const std::string& s) {
  if (s == "flat") return BackgroundStyle::flat;
  if (s == "clutter") return BackgroundStyle::clutter;
  if (s == "textured") return BackgroundStyle::textured;
  throw std::runtime_error("unknown background style: " + s);
}

}  // namespace

DatasetManifest generate_dataset(const SceneConfig& scene, long n_frames, std::uint64_t seed,
                                 const std::string& out_dir) {
  if (n_frames <= 0) throw std::invalid_argument("generate_dataset: n_frames must be positive");
  if (!(scene.dist_min > 0.0) || !(scene.dist_max > scene.dist_min))
    throw std::invalid_argument("generate_dataset: invalid distance range");
  if (scene.visible_fraction < 0.0 || scene.visible_fraction > 1.0)
    throw std::invalid_argument("generate_dataset: visible fraction outside [0, 1]");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw std::runtime_error("generate_dataset: cannot create " + out_dir);

  // Visibility stratified per block so every sequential split sees the
  // configured fraction.
  const long block_size = 200;
  std::vector<char> visible_plan(static_cast<std::size_t>(n_frames), 0);
  for (long b = 0; b * block_size < n_frames; ++b) {
    long lo = b * block_size;
    long len = std::min(block_size, n_frames - lo);
    long want = std::lround(scene.visible_fraction * static_cast<double>(len));
    std::vector<long> idx(static_cast<std::size_t>(len));
    for (long i = 0; i < len; ++i) idx[static_cast<std::size_t>(i)] = lo + i;
    Rng rng = Rng::derive(seed, "visibility", static_cast<std::uint64_t>(b));
    for (long i = 0; i < want && i < len; ++i) {
      long j = i + static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(len - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      visible_plan[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
    }
  }

  long n_train = static_cast<long>(std::floor(scene.train_frac * static_cast<double>(n_frames)));
  long n_val = static_cast<long>(std::floor(scene.val_frac * static_cast<double>(n_frames)));

  DatasetManifest manifest;
  manifest.scene = scene;
  manifest.root_dir = out_dir;
  manifest.records.reserve(static_cast<std::size_t>(n_frames));

  for (long i = 0; i < n_frames; ++i) {
    LedStateVector leds = led_states_for_frame(scene, seed, i);
    Rng frame_rng = Rng::derive(seed, "frame", static_cast<std::uint64_t>(i));
    Sample s;
    if (visible_plan[static_cast<std::size_t>(i)]) {
      Rng pose_rng = Rng::derive(seed, "pose", static_cast<std::uint64_t>(i));
      Pose2D pose = sample_pose(scene, pose_rng);
      s = render_frame(scene, pose, leds, frame_rng);
    } else {
      s.image = render_background(scene, frame_rng);
      s.led_states = leds;
      s.visible = false;
    }
    s.frame_id = i;

    char name[64];
    std::snprintf(name, sizeof(name), "images/frame_%08ld.png", i);
    write_png((fs::path(out_dir) / name).string(), s.image);

    ManifestRecord rec;
    rec.frame_id = i;
    rec.image = name;
    rec.leds = leds.states;
    rec.visible = s.visible;
    if (s.visible) rec.pose = s.gt_pose;
    rec.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    manifest.records.push_back(std::move(rec));
  }

  save_manifest(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
  save_scene(scene, (fs::path(out_dir) / "scene.json").string());
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
  for (const ManifestRecord& r : manifest.records) f << record_to_line(r) << "\n";
  if (!f) throw std::runtime_error("save_manifest: write failed");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
  DatasetManifest m;
  namespace fs = std::filesystem;
  m.root_dir = fs::path(path).parent_path().string();
  if (m.root_dir.empty()) m.root_dir = ".";

  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ManifestRecord r;
    r.frame_id = j.at("frame_id").get<long>();
    r.image = j.at("image").get<std::string>();
    r.leds = j.at("leds").get<std::vector<std::uint8_t>>();
    r.visible = j.at("visible").get<int>() != 0;
    if (!j.at("pose").is_null()) {
      auto p = j.at("pose").get<std::vector<double>>();
      if (p.size() != 3) throw std::runtime_error("load_manifest: pose must have 3 entries");
      r.pose = Pose2D{p[0], p[1], p[2]};
    }
    r.split = j.at("split").get<std::string>();
    m.records.push_back(std::move(r));
  }

  fs::path scene_path = fs::path(m.root_dir) / "scene.json";
  if (fs::exists(scene_path)) m.scene = load_scene(scene_path.string());
  return m;
}

void save_scene(const SceneConfig& scene, const std::string& path) {
  json j;
  j["intrinsics"] = {{"fx", scene.intrinsics.fx}, {"fy", scene.intrinsics.fy},
                     {"cx", scene.intrinsics.cx}, {"cy", scene.intrinsics.cy},
                     {"width", scene.intrinsics.width}, {"height", scene.intrinsics.height}};
  j["led_count"] = scene.led_config.count;
  j["robot_size"] = scene.robot_size;
  j["robot_height"] = scene.robot_height;
  j["led_size"] = scene.led_size;
  j["camera_height"] = scene.camera_height;
  j["dist_min"] = scene.dist_min;
  j["dist_max"] = scene.dist_max;
  j["visible_fraction"] = scene.visible_fraction;
  j["background"] = style_name(scene.background);
  j["domain_id"] = scene.domain_id;
  j["toggle_period"] = scene.toggle_period;
  j["led_on_prob"] = scene.led_on_prob;
  j["boundary_fraction"] = scene.boundary_fraction;
  j["train_frac"] = scene.train_frac;
  j["val_frac"] = scene.val_frac;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_scene: cannot open " + path);
  f << j.dump(2) << "\n";
}

SceneConfig load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_scene: cannot open " + path);
  json j = json::parse(f);
  SceneConfig s;
  const json& in = j.at("intrinsics");
  s.intrinsics.fx = in.at("fx").get<double>();
  s.intrinsics.fy = in.at("fy").get<double>();
  s.intrinsics.cx = in.at("cx").get<double>();
  s.intrinsics.cy = in.at("cy").get<double>();
  s.intrinsics.width = in.at("width").get<int>();
  s.intrinsics.height = in.at("height").get<int>();
  s.led_config.count = j.at("led_count").get<int>();
  s.robot_size = j.at("robot_size").get<double>();
  s.robot_height = j.at("robot_height").get<double>();
  s.led_size = j.at("led_size").get<double>();
  s.camera_height = j.at("camera_height").get<double>();
  s.dist_min = j.at("dist_min").get<double>();
  s.dist_max = j.at("dist_max").get<double>();
  s.visible_fraction = j.at("visible_fraction").get<double>();
  s.background = style_from_name(j.at("background").get<std::string>());
  s.domain_id = j.at("domain_id").get<int>();
  s.toggle_period = j.at("toggle_period").get<int>();
  s.led_on_prob = j.at("led_on_prob").get<double>();
  s.boundary_fraction = j.at("boundary_fraction").get<double>();
  s.train_frac = j.at("train_frac").get<double>();
  s.val_frac = j.at("val_frac").get<double>();
  return s;
}

}  // namespace ledpose
