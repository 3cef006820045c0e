// _sclair: python bindings for the main pipeline operations.
//
// Exposes synthesis, preprocessing, the contrastive loss and its gradient,
// whole-manifest training, LOSO evaluation, classifier-head transfer, and a
// Model wrapper around checkpoint bundles. Reports cross the boundary as
// plain dicts with the same keys the CLI writes to JSON.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "sclair/data.hpp"
#include "sclair/losses.hpp"
#include "sclair/model.hpp"
#include "sclair/report.hpp"
#include "sclair/train.hpp"
#include "sclair/version.hpp"

namespace py = pybind11;
using namespace sclair;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> tensor2d(const DArray& a, const char* what) {
  if (a.ndim() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected a 2-D array, got " +
                                std::to_string(a.ndim()) + "-D");
  }
  Tensor<double> t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
  std::copy(a.data(), a.data() + t.size(), t.data());
  return t;
}

py::array_t<double> array2d(const Tensor<double>& t) {
  py::array_t<double> a({t.rows(), t.cols()});
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

py::array_t<float> array1f(const Tensor<float>& t) {
  py::array_t<float> a(t.size());
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

Tensor<float> sample_from_array(const DArray& a) {
  Tensor<double> t = tensor2d(a, "sample");
  if (t.rows() != kNumChannels || t.cols() != kFixedLen) {
    throw std::invalid_argument("sample: expected shape (6, 155); preprocess() first");
  }
  return t.cast<float>();
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

SupConBatch<double> batch_from(const DArray& z, const std::vector<int>& labels, double tau) {
  SupConBatch<double> b;
  b.z = tensor2d(z, "z");
  b.labels = labels;
  b.tau = tau;
  if (labels.size() != b.z.rows()) {
    throw std::invalid_argument("labels: expected one per row of z");
  }
  return b;
}

TrainConfig make_config(const std::string& loss, const std::string& arch, double tau,
                        std::size_t proj_dim, double lr, std::size_t batch_size,
                        std::size_t max_epochs, std::size_t patience, double val_ratio,
                        std::uint64_t seed, std::size_t jobs) {
  TrainConfig cfg;
  cfg.loss_mode = loss;
  cfg.arch = arch_from_string(arch);
  cfg.tau = tau;
  cfg.hp.proj_dim = proj_dim;
  cfg.learning_rate = lr;
  cfg.batch_size = batch_size;
  cfg.max_epochs = max_epochs;
  cfg.patience = patience;
  cfg.val_ratio = val_ratio;
  cfg.seed = seed;
  cfg.jobs = jobs;
  cfg.validate();
  return cfg;
}

// Model: read-only inference wrapper over a checkpoint bundle.
class PyModel {
 public:
  explicit PyModel(ModelBundle b) : bundle_(std::make_unique<ModelBundle>(std::move(b))) {}

  static PyModel load(const std::string& path) { return PyModel(load_checkpoint(path)); }
  void save(const std::string& path) { save_checkpoint(*bundle_, path); }

  py::array_t<float> encode(const DArray& x) const {
    return array1f(sclair::encode(*bundle_, sample_from_array(x)));
  }

  py::array_t<float> classify(const DArray& x) const {
    const Tensor<float> r = sclair::encode(*bundle_, sample_from_array(x));
    return array1f(sclair::classify(*bundle_, r, Mode::kInfer));
  }

  std::string predict(const DArray& x) const {
    const Tensor<float> r = sclair::encode(*bundle_, sample_from_array(x));
    const Tensor<float> p = sclair::classify(*bundle_, r, Mode::kInfer);
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (p[i] > p[best]) best = i;
    }
    return std::string(1, index_label(static_cast<int>(best)));
  }

  std::string arch() const { return arch_name(bundle_->arch); }
  std::string stage() const { return bundle_->prov.stage; }
  std::size_t param_count() const {
    return sclair::param_count(*bundle_, ParamForm::kInference);
  }

  ModelBundle& bundle() { return *bundle_; }

 private:
  std::unique_ptr<ModelBundle> bundle_;
};

}  // namespace

PYBIND11_MODULE(_sclair, m) {
  m.doc() = "Supervised-contrastive airwriting recognition pipeline";
  m.attr("__version__") = kVersion;
  m.attr("NUM_CHANNELS") = kNumChannels;
  m.attr("SEQ_LEN") = kFixedLen;
  m.attr("NUM_CLASSES") = kNumClasses;

  m.def("label_index", &label_index, py::arg("label"), "'A' -> 0 ... 'Z' -> 25");
  m.def("index_label", &index_label, py::arg("index"), "0 -> 'A' ... 25 -> 'Z'");

  m.def(
      "synth",
      [](const std::string& out_dir, std::size_t subjects, std::size_t reps, std::uint64_t seed,
         double rate_hz, const std::string& name, const std::string& subject_prefix,
         double phase_lo, double phase_hi, double amp_lo, double amp_hi) {
        SynthOptions opt;
        opt.n_subjects = subjects;
        opt.n_reps = reps;
        opt.seed = seed;
        opt.rate_hz = rate_hz;
        opt.out_dir = out_dir;
        opt.dataset_name = name;
        opt.subject_prefix = subject_prefix;
        opt.phase_lo = phase_lo;
        opt.phase_hi = phase_hi;
        opt.amp_lo = amp_lo;
        opt.amp_hi = amp_hi;
        synth_generate(opt);
        return out_dir + "/manifest.json";
      },
      py::arg("out_dir"), py::arg("subjects") = 10, py::arg("reps") = 5, py::arg("seed") = 42,
      py::arg("rate_hz") = kDefaultRateHz, py::arg("name") = "synth",
      py::arg("subject_prefix") = "S", py::arg("phase_lo") = 0.0,
      py::arg("phase_hi") = 0.7853981633974483, py::arg("amp_lo") = 0.8,
      py::arg("amp_hi") = 1.2,
      "Generate a deterministic synthetic IMU corpus; returns the manifest path");

  m.def(
      "preprocess",
      [](const DArray& x, double rate_hz) {
        ImuRecording rec;
        rec.samples = tensor2d(x, "recording");
        if (rec.samples.rows() != kNumChannels) {
          throw std::invalid_argument("recording: expected 6 channel rows");
        }
        rec.sampling_rate_hz = rate_hz;
        return array2d(preprocess(rec).matrix);
      },
      py::arg("x"), py::arg("rate_hz") = kDefaultRateHz,
      "Resample to 62 Hz, pad/truncate to 155, z-score per channel -> (6, 155)");

  m.def(
      "supcon_loss",
      [](const DArray& z, const std::vector<int>& labels, double tau) {
        SupConResult r = supcon_loss(batch_from(z, labels, tau));
        return py::make_tuple(r.loss, r.skipped_anchors);
      },
      py::arg("z"), py::arg("labels"), py::arg("tau") = 0.1,
      "Supervised contrastive loss over unit rows -> (loss, skipped_anchors)");

  m.def(
      "supcon_grad",
      [](const DArray& z, const std::vector<int>& labels, double tau) {
        return array2d(supcon_grad_total(batch_from(z, labels, tau)));
      },
      py::arg("z"), py::arg("labels"), py::arg("tau") = 0.1,
      "Analytic d(loss)/dz, accumulating every appearance of each row");

  m.def(
      "train",
      [](const std::string& manifest, const std::string& loss, const std::string& arch,
         double tau, std::size_t proj_dim, double lr, std::size_t batch_size,
         std::size_t max_epochs, std::size_t patience, double val_ratio, std::uint64_t seed,
         const std::string& out) {
        TrainConfig cfg = make_config(loss, arch, tau, proj_dim, lr, batch_size, max_epochs,
                                      patience, val_ratio, seed, 1);
        DatasetManifest m = load_manifest(manifest);
        cfg.dataset_name = m.dataset_name;
        ManifestTrainResult res = train_on_manifest(m, cfg);
        if (!out.empty()) save_checkpoint(res.outcome.bundle, out);

        nlohmann::json j;
        j["version"] = kVersion;
        j["mode"] = "train";
        j["config"] = cfg.to_json();
        j["n_train"] = res.n_train;
        j["n_val"] = res.n_val;
        if (cfg.loss_mode == "scl") {
          j["stage1"] = res.outcome.stage1.to_json();
          j["stage2"] = res.outcome.stage2.to_json();
        } else {
          j["ce"] = res.outcome.stage2.to_json();
        }
        j["param_counts"] = {
            {"inference", param_count(res.outcome.bundle, ParamForm::kInference)},
            {"proj_params",
             cfg.loss_mode == "scl" ? (encoder_dim(cfg.arch, cfg.hp) + 1) * cfg.hp.proj_dim
                                    : 0}};
        return json_to_py(j);
      },
      py::arg("manifest"), py::arg("loss") = "scl", py::arg("arch") = "1dcnn",
      py::arg("tau") = 0.1, py::arg("proj_dim") = 128, py::arg("lr") = 1e-3,
      py::arg("batch_size") = 32, py::arg("max_epochs") = 100, py::arg("patience") = 5,
      py::arg("val_ratio") = 0.2, py::arg("seed") = 42, py::arg("out") = "",
      "Train on a whole manifest (stratified split); returns the report dict");

  m.def(
      "loso",
      [](const std::string& manifest, const std::string& loss, const std::string& arch,
         double tau, std::size_t proj_dim, double lr, std::size_t batch_size,
         std::size_t max_epochs, std::size_t patience, double val_ratio, std::uint64_t seed,
         std::size_t jobs) {
        TrainConfig cfg = make_config(loss, arch, tau, proj_dim, lr, batch_size, max_epochs,
                                      patience, val_ratio, seed, jobs);
        DatasetManifest m = load_manifest(manifest);
        cfg.dataset_name = m.dataset_name;
        return json_to_py(eval_report_to_json(loso_run(m, cfg)));
      },
      py::arg("manifest"), py::arg("loss") = "scl", py::arg("arch") = "1dcnn",
      py::arg("tau") = 0.1, py::arg("proj_dim") = 128, py::arg("lr") = 1e-3,
      py::arg("batch_size") = 32, py::arg("max_epochs") = 100, py::arg("patience") = 5,
      py::arg("val_ratio") = 0.2, py::arg("seed") = 42, py::arg("jobs") = 1,
      "Leave-one-subject-out sweep; returns the aggregate report dict");

  m.def(
      "finetune",
      [](const std::string& model, const std::string& manifest, double lr,
         std::size_t batch_size, std::size_t max_epochs, std::size_t patience, double val_ratio,
         std::uint64_t seed, bool warm_start_head) {
        ModelBundle pre = load_checkpoint(model);
        DatasetManifest m = load_manifest(manifest);
        TrainConfig cfg;
        cfg.loss_mode = "ce";
        cfg.arch = pre.arch;
        cfg.hp = pre.hp;
        cfg.learning_rate = lr;
        cfg.batch_size = batch_size;
        cfg.max_epochs = max_epochs;
        cfg.patience = patience;
        cfg.val_ratio = val_ratio;
        cfg.seed = seed;
        cfg.warm_start_head = warm_start_head;
        cfg.dataset_name = m.dataset_name;
        TransferReport tr = finetune_loso(pre, m, cfg);
        nlohmann::json j;
        j["version"] = kVersion;
        j["mode"] = "finetune";
        j["config"] = cfg.to_json();
        j["zero_shot"] = eval_report_to_json(tr.zero_shot);
        j["finetuned"] = eval_report_to_json(tr.finetuned);
        return json_to_py(j);
      },
      py::arg("model"), py::arg("manifest"), py::arg("lr") = 1e-3, py::arg("batch_size") = 32,
      py::arg("max_epochs") = 100, py::arg("patience") = 5, py::arg("val_ratio") = 0.2,
      py::arg("seed") = 42, py::arg("warm_start_head") = false,
      "Zero-shot eval + LOSO classifier-head transfer on the target manifest");

  py::class_<PyModel>(m, "Model")
      .def_static("load", &PyModel::load, py::arg("path"), "Load a .sclr checkpoint")
      .def("save", &PyModel::save, py::arg("path"))
      .def("encode", &PyModel::encode, py::arg("x"),
           "Embedding r = Enc(x) for a preprocessed (6, 155) sample")
      .def("classify", &PyModel::classify, py::arg("x"), "Class probabilities, shape (26,)")
      .def("predict", &PyModel::predict, py::arg("x"), "Most probable letter, 'A'..'Z'")
      .def_property_readonly("arch", &PyModel::arch)
      .def_property_readonly("stage", &PyModel::stage)
      .def_property_readonly("param_count", &PyModel::param_count);
}
