#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "noisyood/bundle_io.hpp"
#include "noisyood/classifier.hpp"
#include "noisyood/detectors.hpp"
#include "noisyood/error.hpp"
#include "noisyood/harness.hpp"
#include "noisyood/metrics.hpp"
#include "noisyood/noise.hpp"
#include "noisyood/synth.hpp"

namespace py = pybind11;
using namespace noisyood;
using json = nlohmann::json;

namespace {

using IntArray = py::array_t<int32_t, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Labels to_labels(const IntArray& a) {
  if (a.ndim() != 1) throw ValidationError("labels must be one-dimensional");
  return Labels(a.data(), a.data() + a.size());
}

std::vector<double> to_vector(const FloatArray& a) {
  if (a.ndim() != 1) throw ValidationError("scores must be one-dimensional");
  return std::vector<double>(a.data(), a.data() + a.size());
}

IntArray from_labels(const Labels& labels) {
  IntArray out(static_cast<py::ssize_t>(labels.size()));
  std::copy(labels.begin(), labels.end(), out.mutable_data());
  return out;
}

FloatArray from_vector(const std::vector<double>& v) {
  FloatArray out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  if (t.dtype() == DType::kFloat32) {
    py::array_t<float> out(shape);
    std::copy(t.f32().begin(), t.f32().end(), out.mutable_data());
    return out;
  }
  py::array_t<int32_t> out(shape);
  std::copy(t.i32().begin(), t.i32().end(), out.mutable_data());
  return out;
}

Tensor array_to_tensor(const py::array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  if (py::isinstance<py::array_t<float>>(a) || py::isinstance<py::array_t<double>>(a)) {
    const auto f = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(a);
    return Tensor::float32(shape, std::vector<float>(f.data(), f.data() + f.size()));
  }
  const auto i = py::array_t<int32_t, py::array::c_style | py::array::forcecast>::ensure(a);
  if (!i) throw ValidationError("tensors must be float or integer arrays");
  return Tensor::int32(shape, std::vector<int32_t>(i.data(), i.data() + i.size()));
}

py::dict read_bundle_py(const std::filesystem::path& dir) {
  const TensorBundle b = read_bundle(dir);
  py::dict tensors;
  for (const auto& [key, t] : b.tensors) tensors[py::str(key)] = tensor_to_array(t);
  py::dict out;
  out["name"] = b.name;
  out["tensors"] = tensors;
  out["metadata"] = b.metadata.dump();
  return out;
}

void write_bundle_py(const std::filesystem::path& dir, const std::string& name, const py::dict& tensors,
                     const std::string& metadata) {
  TensorBundle b;
  b.name = name;
  for (const auto& [key, value] : tensors) {
    b.tensors.emplace(py::cast<std::string>(key), array_to_tensor(py::cast<py::array>(value)));
  }
  b.metadata = metadata.empty() ? json::object() : json::parse(metadata);
  write_bundle(b, dir);
}

detect::FeatureSet make_feature_set(const Matrix& features, const Matrix& logits, std::optional<IntArray> labels,
                                    std::vector<Matrix> layers, std::string name) {
  if (features.rows() != logits.rows()) throw ValidationError("features and logits differ in row count");
  detect::FeatureSet fs;
  fs.name = std::move(name);
  fs.features = features;
  fs.logits = logits;
  fs.layers = std::move(layers);
  if (labels) {
    fs.labels = to_labels(*labels);
    if (static_cast<Eigen::Index>(fs.labels->size()) != fs.size()) throw ValidationError("labels differ in length");
  }
  return fs;
}

// A detector together with the fit inputs it may still reference.
class PyDetector {
 public:
  PyDetector(const std::string& method, const std::string& overrides)
      : detector_(detect::make_detector(method, overrides.empty() ? json::object() : json::parse(overrides))) {}
  explicit PyDetector(std::unique_ptr<detect::Detector> d) : detector_(std::move(d)) {}

  void fit(const detect::FeatureSet& id_train, const detect::FeatureSet& id_val,
           std::optional<detect::FeatureSet> ood_val, const std::string& label_source,
           std::optional<std::filesystem::path> model_dir) {
    if (model_dir) model_ = load_model(*model_dir);
    detect::FitContext ctx;
    ctx.id_train = &id_train;
    ctx.id_val = &id_val;
    ctx.ood_val = ood_val ? &*ood_val : nullptr;
    ctx.model = model_ ? &*model_ : nullptr;
    ctx.label_source = detect::label_source_from_string(label_source);
    py::gil_scoped_release release;
    detector_->fit(ctx);
  }

  FloatArray score(const detect::FeatureSet& data) const {
    std::vector<double> s;
    {
      py::gil_scoped_release release;
      s = detector_->score(data);
    }
    return from_vector(s);
  }

  std::string method() const { return detector_->method(); }
  std::string params() const { return detector_->params().dump(); }
  void save(const std::filesystem::path& dir) const { detect::save_detector(*detector_, dir); }

 private:
  std::unique_ptr<detect::Detector> detector_;
  std::optional<ClassifierModel> model_;
};

py::dict triple_to_dict(const metrics::AurocTriple& t) {
  py::dict d;
  d["auroc_id"] = t.id_vs_ood;
  d["auroc_correct"] = t.has_correct() ? py::cast(t.correct_vs_ood) : py::none();
  d["auroc_incorrect"] = t.incorrect_vs_ood ? py::cast(*t.incorrect_vs_ood) : py::none();
  d["n_correct"] = t.n_correct;
  d["n_incorrect"] = t.n_incorrect;
  d["n_ood"] = t.n_ood;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Post-hoc OOD detection benchmark under label noise";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<MissingInputError>(m, "MissingInputError", base.ptr());

  m.def("auroc", [](const FloatArray& pos, const FloatArray& neg) { return metrics::auroc(to_vector(pos), to_vector(neg)); },
        py::arg("pos"), py::arg("neg"));
  m.def(
      "auroc_triple",
      [](const FloatArray& id, const py::array_t<bool>& correct, const FloatArray& ood) {
        const auto c = correct.unchecked<1>();
        std::vector<bool> mask(static_cast<std::size_t>(c.shape(0)));
        for (py::ssize_t i = 0; i < c.shape(0); ++i) mask[static_cast<std::size_t>(i)] = c(i);
        return triple_to_dict(metrics::auroc_triple(to_vector(id), mask, to_vector(ood)));
      },
      py::arg("id_scores"), py::arg("id_correct"), py::arg("ood_scores"));
  m.def("median", [](const FloatArray& v) { return metrics::median(to_vector(v)); });
  m.def("spearman", [](const FloatArray& x, const FloatArray& y) { return metrics::spearman(to_vector(x), to_vector(y)); });
  m.def(
      "aso",
      [](const FloatArray& a, const FloatArray& b, double alpha, int n_bootstrap, uint64_t seed) {
        metrics::AsoOptions o;
        o.alpha = alpha;
        o.n_bootstrap = n_bootstrap;
        o.seed = seed;
        const auto r = metrics::aso(to_vector(a), to_vector(b), o);
        py::dict d;
        d["eps_min"] = r.eps_min;
        d["violation_ratio"] = r.violation_ratio;
        d["alpha"] = r.alpha;
        d["n_bootstrap"] = r.n_bootstrap;
        d["seed"] = r.seed;
        return d;
      },
      py::arg("a"), py::arg("b"), py::arg("alpha") = 0.05, py::arg("n_bootstrap") = 1000, py::arg("seed") = 0);

  m.def(
      "inject_uniform",
      [](const IntArray& labels, int num_classes, double rate, uint64_t seed) {
        return from_labels(inject_uniform(to_labels(labels), num_classes, rate, seed));
      },
      py::arg("labels"), py::arg("num_classes"), py::arg("rate"), py::arg("seed") = 0);
  m.def(
      "inject_class_conditional",
      [](const IntArray& labels, const Matrix& transition, uint64_t seed) {
        return from_labels(inject_class_conditional(to_labels(labels), TransitionMatrix(transition), seed));
      },
      py::arg("labels"), py::arg("transition"), py::arg("seed") = 0);
  m.def(
      "estimate_transition",
      [](const IntArray& clean, const IntArray& noisy, int num_classes) {
        const auto e = estimate_transition(to_labels(clean), to_labels(noisy), num_classes);
        return py::make_tuple(e.transition.matrix(), e.rate);
      },
      py::arg("clean"), py::arg("noisy"), py::arg("num_classes"));

  m.def("read_bundle", &read_bundle_py, py::arg("path"));
  m.def("write_bundle", &write_bundle_py, py::arg("path"), py::arg("name"), py::arg("tensors"),
        py::arg("metadata") = "");
  m.def(
      "generate_hypercube",
      [](const std::filesystem::path& out, const std::string& options) {
        const json j = json::parse(options);
        synth::HypercubeOptions o;
        o.dims = j.value("dims", o.dims);
        o.cube_dims = j.value("cube_dims", o.cube_dims);
        o.scale = j.value("scale", o.scale);
        o.sigma = j.value("sigma", o.sigma);
        o.n_train = j.value("n_train", o.n_train);
        o.n_val = j.value("n_val", o.n_val);
        o.n_test = j.value("n_test", o.n_test);
        o.n_ood = j.value("n_ood", o.n_ood);
        o.n_ood_val = j.value("n_ood_val", o.n_ood_val);
        o.ood_shift = j.value("ood_shift", o.ood_shift);
        o.seed = j.value("seed", o.seed);
        const auto spec = synth::hypercube_mixture(o);
        SplitSet split = synth::generate(spec);
        split.train.metadata["mixture"] = spec.to_json();
        write_split_set(split, out);
      },
      py::arg("out"), py::arg("options"));
  m.def(
      "train_model",
      [](const std::filesystem::path& data, const std::vector<int>& hidden, int epochs, double lr, int batch,
         double momentum, uint64_t seed, const std::string& label_key, const std::filesystem::path& out) {
        const SplitSet split = read_split_set(data);
        MlpSpec spec;
        spec.input_dim = static_cast<int>(split.train.at("feat").shape()[1]);
        spec.hidden_dims = hidden;
        int classes = 0;
        for (int32_t y : split.train.at("label").i32()) classes = std::max(classes, y + 1);
        for (int32_t y : split.val.at("label").i32()) classes = std::max(classes, y + 1);
        spec.num_classes = classes;
        spec.seed = seed;
        TrainOptions o;
        o.epochs = epochs;
        o.learning_rate = lr;
        o.batch_size = batch;
        o.momentum = momentum;
        CheckpointPair pair;
        {
          py::gil_scoped_release release;
          pair = train(spec, split.train, split.val, o, label_key);
        }
        save_model(pair.early, out / "early");
        save_model(pair.last, out / "last");
        return py::make_tuple(pair.early.epoch, pair.last.epoch);
      },
      py::arg("data"), py::arg("hidden"), py::arg("epochs"), py::arg("learning_rate"), py::arg("batch_size"),
      py::arg("momentum"), py::arg("seed"), py::arg("label_key"), py::arg("out"));
  m.def(
      "trace_model",
      [](const std::filesystem::path& model_dir, const Matrix& inputs, std::optional<IntArray> labels) {
        const ClassifierModel model = load_model(model_dir);
        std::optional<Labels> l;
        if (labels) l = to_labels(*labels);
        return detect::feature_set_from_model(model, inputs, l);
      },
      py::arg("model"), py::arg("inputs"), py::arg("labels") = py::none());

  py::class_<detect::FeatureSet>(m, "FeatureSet")
      .def(py::init(&make_feature_set), py::arg("features"), py::arg("logits"), py::arg("labels") = py::none(),
           py::arg("layers") = std::vector<Matrix>{}, py::arg("name") = "")
      .def_static(
          "from_bundle",
          [](const std::filesystem::path& dir, const std::string& label_key) {
            return detect::feature_set_from_bundle(read_bundle(dir), label_key);
          },
          py::arg("path"), py::arg("label_key") = "label")
      .def_readonly("name", &detect::FeatureSet::name)
      .def_readonly("features", &detect::FeatureSet::features)
      .def_readonly("logits", &detect::FeatureSet::logits)
      .def_property_readonly("labels",
                             [](const detect::FeatureSet& fs) -> py::object {
                               if (!fs.labels) return py::none();
                               return from_labels(*fs.labels);
                             })
      .def("__len__", [](const detect::FeatureSet& fs) { return fs.size(); });

  py::class_<PyDetector>(m, "Detector")
      .def(py::init<const std::string&, const std::string&>(), py::arg("method"), py::arg("overrides") = "")
      .def("fit", &PyDetector::fit, py::arg("id_train"), py::arg("id_val"), py::arg("ood_val") = py::none(),
           py::arg("label_source") = "TRAIN", py::arg("model") = py::none())
      .def("score", &PyDetector::score, py::arg("data"))
      .def("save", &PyDetector::save, py::arg("path"))
      .def_property_readonly("method", &PyDetector::method)
      .def_property_readonly("params_json", &PyDetector::params);
  m.def(
      "load_detector", [](const std::filesystem::path& dir) { return PyDetector(detect::load_detector(dir)); },
      py::arg("path"));
  m.def("benchmark_methods", &detect::benchmark_methods);
  m.def("known_methods", &detect::known_methods);

  m.def(
      "run_benchmark",
      [](const std::string& config_json, const std::filesystem::path& output, bool resume) {
        auto config = bench::RunMatrixConfig::from_json(json::parse(config_json));
        if (!output.empty()) config.output = output;
        bench::EvalReport report;
        {
          py::gil_scoped_release release;
          bench::RunOptions options;
          options.resume = resume;
          report = bench::run_matrix(config, options);
          bench::emit_reports(report, config, config.output);
        }
        py::dict d;
        d["planned_cells"] = report.planned_cells;
        d["rows"] = report.rows.size();
        d["failures"] = report.failures.size();
        d["output"] = config.output.string();
        d["label_source_violations"] = report.label_source_violations();
        return d;
      },
      py::arg("config"), py::arg("output") = std::filesystem::path(), py::arg("resume") = false);
  m.def("acceptance_config", []() { return bench::default_acceptance_config().to_json().dump(); });
}
