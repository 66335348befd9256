#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "ledpose/calibrate.hpp"
#include "ledpose/evaluation.hpp"
#include "ledpose/training.hpp"

namespace py = pybind11;
using namespace ledpose;

namespace {

Image array_to_image(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
  py::buffer_info buf = arr.request();
  if (buf.ndim != 3 || buf.shape[2] != 3)
    throw std::invalid_argument("image array must have shape (height, width, 3)");
  Image img(static_cast<int>(buf.shape[1]), static_cast<int>(buf.shape[0]));
  std::memcpy(img.data.data(), buf.ptr, sizeof(float) * img.data.size());
  return img;
}

py::array_t<float> image_to_array(const Image& img) {
  py::array_t<float> arr({img.height, img.width, 3});
  std::memcpy(arr.mutable_data(), img.data.data(), sizeof(float) * img.data.size());
  return arr;
}

}  // namespace

PYBIND11_MODULE(_ledpose, m) {
  m.doc() = "Visual pose estimation trained by classifying LED states";

  py::class_<Pose2D>(m, "Pose2D")
      .def(py::init<>())
      .def(py::init([](double x, double y, double psi) {
             Pose2D p;
             p.x = x;
             p.y = y;
             p.psi = psi;
             return p;
           }),
           py::arg("x"), py::arg("y"), py::arg("psi"))
      .def_readwrite("x", &Pose2D::x)
      .def_readwrite("y", &Pose2D::y)
      .def_readwrite("psi", &Pose2D::psi)
      .def("__repr__", [](const Pose2D& p) {
        return "Pose2D(x=" + std::to_string(p.x) + ", y=" + std::to_string(p.y) +
               ", psi=" + std::to_string(p.psi) + ")";
      });

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init<>())
      .def_readwrite("fx", &CameraIntrinsics::fx)
      .def_readwrite("fy", &CameraIntrinsics::fy)
      .def_readwrite("cx", &CameraIntrinsics::cx)
      .def_readwrite("cy", &CameraIntrinsics::cy)
      .def_readwrite("width", &CameraIntrinsics::width)
      .def_readwrite("height", &CameraIntrinsics::height);

  py::class_<LedConfiguration>(m, "LedConfiguration")
      .def(py::init<>())
      .def_readwrite("count", &LedConfiguration::count)
      .def("mount_bearing", &LedConfiguration::mount_bearing, py::arg("k"));

  m.def("wrap_angle", &wrap_angle, py::arg("theta"));
  m.def("circular_error", &circular_error, py::arg("psi"), py::arg("psi_hat"));
  m.def("back_project", &back_project, py::arg("intrinsics"), py::arg("u"), py::arg("v"),
        py::arg("d"), py::arg("psi"));
  m.def("pose_accuracy_gamma", &pose_accuracy_gamma, py::arg("errors"), py::arg("pos_thresh"),
        py::arg("ang_thresh"));

  m.def("read_png", [](const std::string& path) { return image_to_array(read_png(path)); },
        py::arg("path"));
  m.def("write_png",
        [](const std::string& path, const py::array_t<float, py::array::c_style |
                                                                  py::array::forcecast>& arr) {
          write_png(path, array_to_image(arr));
        },
        py::arg("path"), py::arg("image"));

  py::enum_<BackgroundStyle>(m, "BackgroundStyle")
      .value("flat", BackgroundStyle::flat)
      .value("clutter", BackgroundStyle::clutter)
      .value("textured", BackgroundStyle::textured);

  py::class_<SceneConfig>(m, "SceneConfig")
      .def(py::init<>())
      .def_readwrite("intrinsics", &SceneConfig::intrinsics)
      .def_readwrite("led_config", &SceneConfig::led_config)
      .def_readwrite("robot_size", &SceneConfig::robot_size)
      .def_readwrite("robot_height", &SceneConfig::robot_height)
      .def_readwrite("led_size", &SceneConfig::led_size)
      .def_readwrite("camera_height", &SceneConfig::camera_height)
      .def_readwrite("dist_min", &SceneConfig::dist_min)
      .def_readwrite("dist_max", &SceneConfig::dist_max)
      .def_readwrite("visible_fraction", &SceneConfig::visible_fraction)
      .def_readwrite("background", &SceneConfig::background)
      .def_readwrite("domain_id", &SceneConfig::domain_id)
      .def_readwrite("toggle_period", &SceneConfig::toggle_period)
      .def_readwrite("led_on_prob", &SceneConfig::led_on_prob)
      .def_readwrite("boundary_fraction", &SceneConfig::boundary_fraction)
      .def_readwrite("train_frac", &SceneConfig::train_frac)
      .def_readwrite("val_frac", &SceneConfig::val_frac);

  py::class_<ManifestRecord>(m, "ManifestRecord")
      .def(py::init<>())
      .def_readwrite("frame_id", &ManifestRecord::frame_id)
      .def_readwrite("image", &ManifestRecord::image)
      .def_readwrite("leds", &ManifestRecord::leds)
      .def_readwrite("visible", &ManifestRecord::visible)
      .def_readwrite("pose", &ManifestRecord::pose)
      .def_readwrite("split", &ManifestRecord::split);

  py::class_<DatasetManifest>(m, "DatasetManifest")
      .def(py::init<>())
      .def_readwrite("records", &DatasetManifest::records)
      .def_readwrite("scene", &DatasetManifest::scene)
      .def_readwrite("root_dir", &DatasetManifest::root_dir);

  m.def("led_visibility_oracle", &led_visibility_oracle, py::arg("psi"), py::arg("led_config"));
  m.def("generate_dataset", &generate_dataset, py::arg("scene"), py::arg("n_frames"),
        py::arg("seed"), py::arg("out_dir"), py::call_guard<py::gil_scoped_release>());
  m.def("save_manifest", &save_manifest, py::arg("manifest"), py::arg("path"));
  m.def("load_manifest", &load_manifest, py::arg("path"));
  m.def("save_scene", &save_scene, py::arg("scene"), py::arg("path"));
  m.def("load_scene", &load_scene, py::arg("path"));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("input_width", &ModelConfig::input_width)
      .def_readwrite("input_height", &ModelConfig::input_height)
      .def_readwrite("blocks", &ModelConfig::blocks)
      .def_readwrite("channels", &ModelConfig::channels)
      .def_readwrite("downsample", &ModelConfig::downsample)
      .def_readwrite("receptive_field", &ModelConfig::receptive_field)
      .def_readwrite("led_count", &ModelConfig::led_count)
      .def_readwrite("scales", &ModelConfig::scales)
      .def("head_channels", &ModelConfig::head_channels);

  py::class_<Model>(m, "Model")
      .def_readonly("cfg", &Model::cfg)
      .def("parameter_count", &Model::parameter_count);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def(py::init<>())
      .def_readwrite("cfg", &Checkpoint::cfg)
      .def_readwrite("meta_num", &Checkpoint::meta_num)
      .def_readwrite("meta_str", &Checkpoint::meta_str);

  m.def("build_model", &build_model, py::arg("cfg"), py::arg("seed"));
  m.def("snapshot", &snapshot, py::arg("model"));
  m.def("restore", &restore, py::arg("model"), py::arg("checkpoint"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("checkpoint"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("model_from_checkpoint", &model_from_checkpoint, py::arg("checkpoint"));

  py::class_<Calibration>(m, "Calibration")
      .def(py::init<>())
      .def_readwrite("f", &Calibration::f)
      .def_readwrite("d_c", &Calibration::d_c)
      .def_readwrite("rf", &Calibration::rf)
      .def("valid", &Calibration::valid);

  py::class_<CalibrationResult>(m, "CalibrationResult")
      .def_readonly("calibration", &CalibrationResult::calibration)
      .def_readonly("presence_score", &CalibrationResult::presence_score)
      .def_readonly("multiplier", &CalibrationResult::multiplier);

  m.def("default_calibration", &default_calibration, py::arg("cfg"));
  m.def("calibrate_from_image",
        [](const Model& model, const py::array_t<float, py::array::c_style |
                                                            py::array::forcecast>& image,
           double known_distance, double min_presence) {
          return calibrate_from_image(model, array_to_image(image), known_distance, min_presence);
        },
        py::arg("model"), py::arg("image"), py::arg("known_distance"),
        py::arg("min_presence") = 0.2);
  m.def("calibrate_from_rf_distance", &calibrate_from_rf_distance, py::arg("cfg"),
        py::arg("robot_size"), py::arg("fx"));
  m.def("save_calibration", &save_calibration, py::arg("calibration"), py::arg("path"));
  m.def("load_calibration", &load_calibration, py::arg("path"));

  py::class_<PoseEstimate>(m, "PoseEstimate")
      .def_readonly("u", &PoseEstimate::u)
      .def_readonly("v", &PoseEstimate::v)
      .def_readonly("psi", &PoseEstimate::psi)
      .def_readonly("d", &PoseEstimate::d)
      .def_readonly("led_probs", &PoseEstimate::led_probs)
      .def_readonly("presence_score", &PoseEstimate::presence_score)
      .def_readonly("confidence", &PoseEstimate::confidence)
      .def_readonly("pose", &PoseEstimate::pose);

  py::class_<ExtractParams>(m, "ExtractParams")
      .def(py::init<>())
      .def_readwrite("max_robots", &ExtractParams::max_robots)
      .def_readwrite("nms_radius", &ExtractParams::nms_radius)
      .def_readwrite("threshold", &ExtractParams::threshold);

  m.def("estimate_pose",
        [](const Model& model, const py::array_t<float, py::array::c_style |
                                                            py::array::forcecast>& image,
           const Calibration& cal, const CameraIntrinsics& intr) {
          return estimate_pose(model, array_to_image(image), cal, intr);
        },
        py::arg("model"), py::arg("image"), py::arg("calibration"), py::arg("intrinsics"));
  m.def("estimate_poses",
        [](const Model& model, const py::array_t<float, py::array::c_style |
                                                            py::array::forcecast>& image,
           const Calibration& cal, const CameraIntrinsics& intr, const ExtractParams& params) {
          return estimate_poses(model, array_to_image(image), cal, intr, params);
        },
        py::arg("model"), py::arg("image"), py::arg("calibration"), py::arg("intrinsics"),
        py::arg("params") = ExtractParams{});

  py::class_<AugmentParams>(m, "AugmentParams")
      .def(py::init<>())
      .def_readwrite("enabled", &AugmentParams::enabled)
      .def_readwrite("field_amp", &AugmentParams::field_amp)
      .def_readwrite("field_cell", &AugmentParams::field_cell)
      .def_readwrite("field_octaves", &AugmentParams::field_octaves)
      .def_readwrite("brightness", &AugmentParams::brightness)
      .def_readwrite("contrast", &AugmentParams::contrast)
      .def_readwrite("saturation", &AugmentParams::saturation);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("sub_batch", &TrainConfig::sub_batch)
      .def_readwrite("lr_init", &TrainConfig::lr_init)
      .def_readwrite("lr_final", &TrainConfig::lr_final)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("adam_eps", &TrainConfig::adam_eps)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("augment", &TrainConfig::augment)
      .def_readwrite("verbose", &TrainConfig::verbose)
      .def_readwrite("checkpoint_path", &TrainConfig::checkpoint_path)
      .def_readwrite("start_epoch", &TrainConfig::start_epoch)
      .def_readwrite("max_train_frames", &TrainConfig::max_train_frames);

  py::class_<TrainHistory>(m, "TrainHistory")
      .def_readonly("train_loss", &TrainHistory::train_loss)
      .def_readonly("val_loss", &TrainHistory::val_loss)
      .def_readonly("lr", &TrainHistory::lr)
      .def_readonly("best_epoch", &TrainHistory::best_epoch)
      .def_readonly("best_val", &TrainHistory::best_val)
      .def_readonly("pose_reads", &TrainHistory::pose_reads);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<DatasetManifest, bool, bool>(), py::arg("manifest"),
           py::arg("cache_images") = true, py::arg("allow_pose") = false)
      .def("__len__", &Dataset::size)
      .def("manifest", &Dataset::manifest, py::return_value_policy::reference_internal)
      .def("split_indices", &Dataset::split_indices, py::arg("split"))
      .def("image", [](const Dataset& d, std::size_t idx) { return image_to_array(d.image(idx)); },
           py::arg("idx"))
      .def("leds", &Dataset::leds, py::arg("idx"))
      .def("visible", &Dataset::visible, py::arg("idx"))
      .def("pose", &Dataset::pose, py::arg("idx"))
      .def("pose_reads", &Dataset::pose_reads)
      .def("permute_labels", &Dataset::permute_labels, py::arg("seed"));

  m.def("lr_at", &lr_at, py::arg("cfg"), py::arg("epoch"));
  m.def("early_stop_select", &early_stop_select, py::arg("val_losses"));
  m.def("train", &train, py::arg("model"), py::arg("data"), py::arg("cfg"),
        py::call_guard<py::gil_scoped_release>());
  m.def("train_supervised_upperbound", &train_supervised_upperbound, py::arg("model"),
        py::arg("data"), py::arg("cfg"), py::arg("calibration"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<MetricsReport>(m, "MetricsReport")
      .def(py::init<>())
      .def_readwrite("e_uv", &MetricsReport::e_uv)
      .def_readwrite("e_psi", &MetricsReport::e_psi)
      .def_readwrite("e_d", &MetricsReport::e_d)
      .def_readwrite("auc_led", &MetricsReport::auc_led)
      .def_readwrite("gamma", &MetricsReport::gamma)
      .def_readwrite("n_samples", &MetricsReport::n_samples);

  py::class_<DetectionReport>(m, "DetectionReport")
      .def_readonly("auc_max", &DetectionReport::auc_max)
      .def_readonly("auc_entropy", &DetectionReport::auc_entropy)
      .def_readonly("n_positive", &DetectionReport::n_positive)
      .def_readonly("n_negative", &DetectionReport::n_negative);

  m.def("auc_binary", &auc_binary, py::arg("scores"), py::arg("labels"));
  m.def("evaluate", &evaluate, py::arg("model"), py::arg("manifest"), py::arg("calibration"),
        py::arg("split"), py::call_guard<py::gil_scoped_release>());
  m.def("evaluate_detection", &evaluate_detection, py::arg("model"), py::arg("manifest"),
        py::arg("split"), py::call_guard<py::gil_scoped_release>());
  m.def("mean_predictor", &mean_predictor, py::arg("manifest"), py::arg("split") = "train");
  m.def("evaluate_constant_pose", &evaluate_constant_pose, py::arg("manifest"), py::arg("pose"),
        py::arg("split"));
  m.def("save_report", &save_report, py::arg("report"), py::arg("path"));
  m.def("load_report", &load_report, py::arg("path"));

  m.attr("GAMMA_POS_THRESH") = kGammaPosThresh;
  m.attr("GAMMA_ANG_THRESH") = kGammaAngThresh;
}
