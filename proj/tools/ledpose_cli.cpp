#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ledpose/calibrate.hpp"
#include "ledpose/evaluation.hpp"
#include "ledpose/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ledpose;

namespace {

struct RunManifest {
  fs::path dir;
  std::vector<std::string> files;

  void add(const std::string& rel) { files.push_back(rel); }
  void write() {
    std::ofstream out(dir / "produced.txt");
    if (!out) throw std::runtime_error("cannot write " + (dir / "produced.txt").string());
    for (const std::string& f : files) out << f << "\n";
  }
};

RunManifest open_run_dir(const std::string& dir, bool force) {
  fs::path p(dir);
  if (fs::exists(p / "produced.txt") && !force)
    throw std::invalid_argument("output directory already holds a run, pass --force: " + dir);
  fs::create_directories(p);
  return RunManifest{p, {}};
}

void guard_output_file(const std::string& path, bool force) {
  if (fs::exists(path) && !force)
    throw std::invalid_argument("output file exists, pass --force: " + path);
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path))
    throw std::invalid_argument(std::string(what) + " not found: " + path);
}

std::string manifest_path(const std::string& data_dir) {
  std::string p = (fs::path(data_dir) / "manifest.jsonl").string();
  require_file(p, "dataset manifest");
  return p;
}

Model load_model(const std::string& ckpt_path) {
  require_file(ckpt_path, "checkpoint");
  return model_from_checkpoint(load_checkpoint(ckpt_path));
}

void write_history(const fs::path& path, const TrainHistory& hist) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[128];
  for (std::size_t i = 0; i < hist.train_loss.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "epoch %zu lr %.17g train %.17g val %.17g", i, hist.lr[i],
                  hist.train_loss[i], hist.val_loss[i]);
    out << buf << "\n";
  }
  std::snprintf(buf, sizeof(buf), "best_epoch %d\nbest_val %.17g\npose_reads %ld",
                hist.best_epoch, hist.best_val, hist.pose_reads);
  out << buf << "\n";
}

struct SceneFlags {
  SceneConfig scene;
  std::string background = "clutter";

  void attach(CLI::App* cmd) {
    CameraIntrinsics& in = scene.intrinsics;
    cmd->add_option("--width", in.width, "Frame width, pixels")->capture_default_str();
    cmd->add_option("--height", in.height, "Frame height, pixels")->capture_default_str();
    cmd->add_option("--fx", in.fx, "Focal length x, pixels")->capture_default_str();
    cmd->add_option("--fy", in.fy, "Focal length y, pixels")->capture_default_str();
    cmd->add_option("--cx", in.cx, "Principal point x")->capture_default_str();
    cmd->add_option("--cy", in.cy, "Principal point y")->capture_default_str();
    cmd->add_option("--leds", scene.led_config.count, "LED count")->capture_default_str();
    cmd->add_option("--robot-size", scene.robot_size, "Body width, meters")
        ->capture_default_str();
    cmd->add_option("--robot-height", scene.robot_height, "Body height, meters")
        ->capture_default_str();
    cmd->add_option("--dist-min", scene.dist_min, "Nearest pose, meters")->capture_default_str();
    cmd->add_option("--dist-max", scene.dist_max, "Farthest pose, meters")->capture_default_str();
    cmd->add_option("--visible-frac", scene.visible_fraction, "Fraction of frames with a robot")
        ->capture_default_str();
    cmd->add_option("--background", background, "Background style")
        ->check(CLI::IsMember({"flat", "clutter", "textured"}))
        ->capture_default_str();
    cmd->add_option("--domain", scene.domain_id, "Background texture/palette key")
        ->capture_default_str();
    cmd->add_option("--toggle-period", scene.toggle_period, "Frames between LED resampling")
        ->capture_default_str();
    cmd->add_option("--led-on-prob", scene.led_on_prob, "Per-LED on probability")
        ->capture_default_str();
    cmd->add_option("--train-frac", scene.train_frac, "Train split fraction")
        ->capture_default_str();
    cmd->add_option("--val-frac", scene.val_frac, "Validation split fraction")
        ->capture_default_str();
  }

  SceneConfig resolve() const {
    SceneConfig s = scene;
    if (background == "flat")
      s.background = BackgroundStyle::flat;
    else if (background == "textured")
      s.background = BackgroundStyle::textured;
    else
      s.background = BackgroundStyle::clutter;
    return s;
  }
};

struct TrainFlags {
  TrainConfig cfg;
  bool no_augment = false;
  bool no_cache = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch", cfg.batch_size, "Optimizer batch size")->capture_default_str();
    cmd->add_option("--sub-batch", cfg.sub_batch, "Batch-norm statistics window")
        ->capture_default_str();
    cmd->add_option("--lr-init", cfg.lr_init, "Initial learning rate")->capture_default_str();
    cmd->add_option("--lr-final", cfg.lr_final, "Final learning rate")->capture_default_str();
    cmd->add_flag("--no-augment", no_augment, "Disable photometric augmentation");
    cmd->add_flag("--no-cache", no_cache, "Reload frames from disk instead of caching");
    cmd->add_flag("--verbose", cfg.verbose, "Per-epoch progress on stdout");
  }

  TrainConfig resolve(std::uint64_t seed, const std::string& ckpt_path) const {
    TrainConfig c = cfg;
    c.seed = seed;
    c.augment.enabled = !no_augment;
    c.checkpoint_path = ckpt_path;
    return c;
  }
};

int cmd_gen_data(const SceneFlags& flags, long frames, std::uint64_t seed,
                 const std::string& out_dir, bool force) {
  if (fs::exists(fs::path(out_dir) / "manifest.jsonl") && !force)
    throw std::invalid_argument("dataset already exists, pass --force: " + out_dir);
  SceneConfig scene = flags.resolve();
  DatasetManifest man = generate_dataset(scene, frames, seed, out_dir);

  RunManifest run{fs::path(out_dir), {}};
  run.add("manifest.jsonl");
  run.add("scene.json");
  for (const ManifestRecord& rec : man.records) run.add(rec.image);
  run.write();

  long visible = 0;
  for (const ManifestRecord& rec : man.records) visible += rec.visible ? 1 : 0;
  std::cout << "frames=" << man.records.size() << " visible=" << visible << " dir=" << out_dir
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir, const TrainFlags& tflags,
              std::vector<int> channels, std::vector<double> scales, std::uint64_t seed,
              const std::string& resume, int start_epoch, long max_frames, bool permute,
              bool supervised, const std::string& calibration_path, bool force) {
  DatasetManifest man = load_manifest(manifest_path(data_dir));
  RunManifest run = open_run_dir(out_dir, force);
  std::string ckpt_path = (run.dir / "checkpoint.ckpt").string();

  Model model = [&] {
    if (!resume.empty()) return load_model(resume);
    ModelConfig mcfg;
    mcfg.input_width = man.scene.intrinsics.width;
    mcfg.input_height = man.scene.intrinsics.height;
    mcfg.channels = std::move(channels);
    mcfg.led_count = man.scene.led_config.count;
    mcfg.scales = std::move(scales);
    return build_model(mcfg, Rng::derive(seed, "init").next());
  }();

  TrainConfig cfg = tflags.resolve(seed, ckpt_path);
  cfg.start_epoch = start_epoch;
  cfg.max_train_frames = max_frames;

  Dataset data(std::move(man), !tflags.no_cache, supervised);
  if (permute) data.permute_labels(Rng::derive(seed, "permute").next());

  TrainHistory hist;
  if (supervised) {
    Calibration cal = calibration_path.empty()
                          ? calibrate_from_rf_distance(model.cfg, data.manifest().scene.robot_size,
                                                       data.manifest().scene.intrinsics.fx)
                          : load_calibration(calibration_path);
    hist = train_supervised_upperbound(model, data, cfg, cal);
  } else {
    hist = train(model, data, cfg);
  }

  write_history(run.dir / "history.txt", hist);
  run.add("checkpoint.ckpt");
  run.add("history.txt");
  run.write();
  std::cout << "best_epoch=" << hist.best_epoch << " best_val=" << hist.best_val
            << " pose_reads=" << hist.pose_reads << " checkpoint=" << ckpt_path << "\n";
  return 0;
}

int cmd_finetune(const std::string& data_dir, const std::string& from_ckpt,
                 const std::string& out_dir, const TrainFlags& tflags, std::vector<long> samples,
                 std::uint64_t seed, bool force) {
  if (samples.empty()) throw std::invalid_argument("--samples needs at least one budget");
  for (long n : samples)
    if (n < 1) throw std::invalid_argument("--samples budgets must be positive");

  DatasetManifest man = load_manifest(manifest_path(data_dir));
  require_file(from_ckpt, "checkpoint");
  Checkpoint base = load_checkpoint(from_ckpt);
  RunManifest run = open_run_dir(out_dir, force);

  Dataset data(std::move(man), !tflags.no_cache, false);
  for (long n : samples) {
    Model model = model_from_checkpoint(base);
    std::string tag = "ft_" + std::to_string(n);
    std::string ckpt_path = (run.dir / (tag + ".ckpt")).string();
    TrainConfig cfg =
        tflags.resolve(Rng::derive(seed, "finetune", static_cast<std::uint64_t>(n)).next(),
                       ckpt_path);
    cfg.max_train_frames = n;
    TrainHistory hist = train(model, data, cfg);
    write_history(run.dir / (tag + "_history.txt"), hist);
    run.add(tag + ".ckpt");
    run.add(tag + "_history.txt");
    std::cout << "samples=" << n << " best_epoch=" << hist.best_epoch
              << " best_val=" << hist.best_val << "\n";
  }
  run.write();
  return 0;
}

int cmd_calibrate(const std::string& model_path, const std::string& image_path, double distance,
                  double min_presence, bool rf_anchor, double robot_size, double fx,
                  const std::string& out_file, bool force) {
  guard_output_file(out_file, force);
  Model model = load_model(model_path);

  Calibration cal;
  if (rf_anchor) {
    if (!image_path.empty())
      throw std::invalid_argument("--rf-anchor and --image are mutually exclusive");
    cal = calibrate_from_rf_distance(model.cfg, robot_size, fx);
    std::cout << "mode=rf-anchor d_c=" << cal.d_c << "\n";
  } else {
    if (image_path.empty())
      throw std::invalid_argument("calibrate needs --image with --distance, or --rf-anchor");
    require_file(image_path, "calibration image");
    if (!(distance > 0.0)) throw std::invalid_argument("--distance must be positive");
    CalibrationResult res =
        calibrate_from_image(model, read_png(image_path), distance, min_presence);
    cal = res.calibration;
    std::cout << "mode=image d_c=" << cal.d_c << " presence=" << res.presence_score << "\n";
  }
  save_calibration(cal, out_file);
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir,
             const std::string& calibration_path, const std::string& split,
             const std::string& out_dir, bool detection, bool baseline, bool force) {
  require_file(calibration_path, "calibration file");
  DatasetManifest man = load_manifest(manifest_path(data_dir));
  Model model = load_model(model_path);
  Calibration cal = load_calibration(calibration_path);
  RunManifest run = open_run_dir(out_dir, force);

  MetricsReport rep = evaluate(model, man, cal, split);
  save_report(rep, (run.dir / "metrics.txt").string());
  run.add("metrics.txt");
  std::cout << "e_uv=" << rep.e_uv << " e_psi=" << rep.e_psi << " e_d=" << rep.e_d
            << " auc_led=" << rep.auc_led << " gamma=" << rep.gamma << " n=" << rep.n_samples
            << "\n";

  if (detection) {
    DetectionReport det = evaluate_detection(model, man, split);
    std::ofstream out(run.dir / "detection.txt");
    if (!out) throw std::runtime_error("cannot write detection report");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", det.auc_max);
    out << "auc_max " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", det.auc_entropy);
    out << "auc_entropy " << buf << "\n";
    out << "n_positive " << det.n_positive << "\nn_negative " << det.n_negative << "\n";
    run.add("detection.txt");
    std::cout << "auc_max=" << det.auc_max << " auc_entropy=" << det.auc_entropy << "\n";
  }

  if (baseline) {
    Pose2D mp = mean_predictor(man, "train");
    MetricsReport base = evaluate_constant_pose(man, mp, split);
    save_report(base, (run.dir / "baseline.txt").string());
    run.add("baseline.txt");
    std::cout << "baseline_gamma=" << base.gamma << " baseline_e_uv=" << base.e_uv << "\n";
  }

  run.write();
  return 0;
}

int cmd_infer(const std::string& model_path, const std::string& calibration_path,
              const std::string& scene_path, const std::vector<std::string>& images, bool multi,
              const ExtractParams& params) {
  require_file(calibration_path, "calibration file");
  Model model = load_model(model_path);
  Calibration cal = load_calibration(calibration_path);
  SceneConfig scene;
  if (!scene_path.empty()) {
    require_file(scene_path, "scene file");
    scene = load_scene(scene_path);
  }
  for (const std::string& path : images) require_file(path, "input image");

  auto emit = [](const std::string& path, int robot, const PoseEstimate& est) {
    json rec{{"image", path},         {"robot", robot},
             {"u", est.u},            {"v", est.v},
             {"psi", est.psi},        {"d", est.d},
             {"x", est.pose.x},       {"y", est.pose.y},
             {"presence", est.presence_score}, {"confidence", est.confidence},
             {"leds", est.led_probs}};
    std::cout << rec.dump() << "\n";
  };

  for (const std::string& path : images) {
    Image img = read_png(path);
    if (multi) {
      std::vector<PoseEstimate> ests = estimate_poses(model, img, cal, scene.intrinsics, params);
      for (std::size_t r = 0; r < ests.size(); ++r)
        emit(path, static_cast<int>(r), ests[r]);
    } else {
      emit(path, 0, estimate_pose(model, img, cal, scene.intrinsics));
    }
  }
  return 0;
}

int cmd_dump_maps(const std::string& model_path, const std::string& image_path,
                  const std::string& out_dir, bool force) {
  require_file(image_path, "input image");
  Model model = load_model(model_path);
  Image img = read_png(image_path);
  MultiScaleStack stack = multi_scale_forward(model, img);
  RunManifest run = open_run_dir(out_dir, force);

  auto dump = [&](const std::string& name, const std::vector<double>& map) {
    write_png_gray((run.dir / name).string(), map, stack.w, stack.h);
    run.add(name);
  };

  for (int s = 0; s < stack.S(); ++s) {
    std::string suffix = "_s" + std::to_string(s) + ".png";
    dump("presence" + suffix, stack.p_ms_norm[static_cast<std::size_t>(s)]);
    dump("bearing_c" + suffix, stack.bearing_c[static_cast<std::size_t>(s)]);
    dump("bearing_s" + suffix, stack.bearing_s[static_cast<std::size_t>(s)]);
    for (int k = 0; k < stack.K; ++k) {
      std::vector<double> probs(stack.led_logits[static_cast<std::size_t>(s)]
                                    [static_cast<std::size_t>(k)]);
      for (double& v : probs) v = 1.0 / (1.0 + std::exp(-v));
      dump("led" + std::to_string(k) + suffix, probs);
    }
  }
  run.write();
  std::cout << "maps=" << run.files.size() << " dir=" << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LED-pretext visual pose estimation pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read flags from a config file, sections per subcommand");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset with a JSONL manifest");
  SceneFlags scene_flags;
  scene_flags.attach(gen);
  long frames = 1000;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  bool gen_force = false;
  gen->add_option("--frames", frames, "Number of frames")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Root random seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_flag("--force", gen_force, "Overwrite an existing dataset");

  // train
  auto* tr = app.add_subcommand("train", "Self-supervised training on LED labels");
  TrainFlags train_flags;
  train_flags.attach(tr);
  std::string tr_data, tr_out, tr_resume, tr_calibration;
  std::vector<int> tr_channels = ModelConfig{}.channels;
  std::vector<double> tr_scales = ModelConfig{}.scales;
  std::uint64_t tr_seed = 1;
  int tr_start_epoch = 0;
  long tr_max_frames = 0;
  bool tr_permute = false, tr_supervised = false, tr_force = false;
  tr->add_option("--data", tr_data, "Dataset directory from gen-data")->required();
  tr->add_option("--out", tr_out, "Run output directory")->required();
  tr->add_option("--channels", tr_channels, "Per-block channel counts")
      ->delimiter(',')
      ->capture_default_str();
  tr->add_option("--scales", tr_scales, "Pyramid scale factors")
      ->delimiter(',')
      ->capture_default_str();
  tr->add_option("--seed", tr_seed, "Root random seed")->capture_default_str();
  tr->add_option("--resume", tr_resume, "Warm-start checkpoint");
  tr->add_option("--start-epoch", tr_start_epoch, "Resume position on the cosine schedule")
      ->capture_default_str();
  tr->add_option("--max-frames", tr_max_frames, "Truncate the train split, 0 = all")
      ->capture_default_str();
  tr->add_flag("--permute-labels", tr_permute, "Shuffle LED labels among frames, null control");
  tr->add_flag("--supervised", tr_supervised, "Train the pose-supervised reference instead");
  tr->add_option("--calibration", tr_calibration,
                 "Calibration file for --supervised, default: receptive-field anchor");
  tr->add_flag("--force", tr_force, "Overwrite an existing run directory");

  // finetune
  auto* ft = app.add_subcommand("finetune", "Adapt a checkpoint with growing sample budgets");
  TrainFlags ft_flags;
  ft_flags.attach(ft);
  std::string ft_data, ft_from, ft_out;
  std::vector<long> ft_samples;
  std::uint64_t ft_seed = 1;
  bool ft_force = false;
  ft->add_option("--data", ft_data, "Target-domain dataset directory")->required();
  ft->add_option("--from", ft_from, "Source checkpoint to adapt")->required();
  ft->add_option("--out", ft_out, "Run output directory")->required();
  ft->add_option("--samples", ft_samples, "Train-frame budgets, one run each")
      ->delimiter(',')
      ->required();
  ft->add_option("--seed", ft_seed, "Root random seed")->capture_default_str();
  ft->add_flag("--force", ft_force, "Overwrite an existing run directory");

  // calibrate
  auto* cb = app.add_subcommand("calibrate", "Anchor the distance scale of a trained model");
  std::string cb_model, cb_image, cb_out;
  double cb_distance = 0.0, cb_min_presence = 0.2, cb_robot_size = 0.5, cb_fx = 560.0;
  bool cb_rf = false, cb_force = false;
  cb->add_option("--model", cb_model, "Model checkpoint")->required();
  cb->add_option("--out", cb_out, "Calibration file to write")->required();
  cb->add_option("--image", cb_image, "Frame showing a robot at --distance");
  cb->add_option("--distance", cb_distance, "Known robot distance, meters")
      ->capture_default_str();
  cb->add_option("--min-presence", cb_min_presence, "Presence score required to accept")
      ->capture_default_str();
  cb->add_flag("--rf-anchor", cb_rf, "Geometric fallback without a reference frame");
  cb->add_option("--robot-size", cb_robot_size, "Body width for --rf-anchor, meters")
      ->capture_default_str();
  cb->add_option("--fx", cb_fx, "Focal length for --rf-anchor, pixels")->capture_default_str();
  cb->add_flag("--force", cb_force, "Overwrite an existing calibration file");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  std::string ev_model, ev_data, ev_calibration, ev_split = "test", ev_out;
  bool ev_detection = false, ev_baseline = false, ev_force = false;
  ev->add_option("--model", ev_model, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--calibration", ev_calibration, "Calibration file from calibrate")->required();
  ev->add_option("--split", ev_split, "Manifest split to score")->capture_default_str();
  ev->add_option("--out", ev_out, "Run output directory")->required();
  ev->add_flag("--detection", ev_detection, "Also score presence detection");
  ev->add_flag("--baseline", ev_baseline, "Also score the mean-pose baseline");
  ev->add_flag("--force", ev_force, "Overwrite an existing run directory");

  // infer
  auto* in = app.add_subcommand("infer", "Pose estimates as JSON lines on stdout");
  std::string in_model, in_calibration, in_scene;
  std::vector<std::string> in_images;
  ExtractParams in_params;
  bool in_multi = false;
  in->add_option("--model", in_model, "Model checkpoint")->required();
  in->add_option("--calibration", in_calibration, "Calibration file")->required();
  in->add_option("--scene", in_scene, "scene.json with the camera intrinsics, default: stock");
  in->add_option("images", in_images, "Input PNG frames")->required();
  in->add_flag("--multi", in_multi, "Split multiple robots per frame");
  in->add_option("--max-robots", in_params.max_robots, "Detection cap for --multi")
      ->capture_default_str();
  in->add_option("--nms-radius", in_params.nms_radius, "Peak suppression radius, cells")
      ->capture_default_str();
  in->add_option("--threshold", in_params.threshold, "Peak threshold on rescaled presence")
      ->capture_default_str();

  // dump-maps
  auto* dm = app.add_subcommand("dump-maps", "Write the network output maps as grayscale PNGs");
  std::string dm_model, dm_image, dm_out;
  bool dm_force = false;
  dm->add_option("--model", dm_model, "Model checkpoint")->required();
  dm->add_option("--image", dm_image, "Input PNG frame")->required();
  dm->add_option("--out", dm_out, "Run output directory")->required();
  dm->add_flag("--force", dm_force, "Overwrite an existing run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion")
      return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(scene_flags, frames, gen_seed, gen_out, gen_force);
    if (tr->parsed())
      return cmd_train(tr_data, tr_out, train_flags, tr_channels, tr_scales, tr_seed, tr_resume,
                       tr_start_epoch, tr_max_frames, tr_permute, tr_supervised, tr_calibration,
                       tr_force);
    if (ft->parsed())
      return cmd_finetune(ft_data, ft_from, ft_out, ft_flags, ft_samples, ft_seed, ft_force);
    if (cb->parsed())
      return cmd_calibrate(cb_model, cb_image, cb_distance, cb_min_presence, cb_rf, cb_robot_size,
                           cb_fx, cb_out, cb_force);
    if (ev->parsed())
      return cmd_eval(ev_model, ev_data, ev_calibration, ev_split, ev_out, ev_detection,
                      ev_baseline, ev_force);
    if (in->parsed())
      return cmd_infer(in_model, in_calibration, in_scene, in_images, in_multi, in_params);
    if (dm->parsed())
      return cmd_dump_maps(dm_model, dm_image, dm_out, dm_force);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
