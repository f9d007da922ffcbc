#include <algorithm>

#include "detector_impl.hpp"
#include "noisyood/bundle_io.hpp"

namespace noisyood::detect {

std::string to_string(LabelSource source) { return source == LabelSource::kTrain ? "TRAIN" : "VAL"; }

LabelSource label_source_from_string(const std::string& name) {
  if (name == "TRAIN" || name == "train") return LabelSource::kTrain;
  if (name == "VAL" || name == "val") return LabelSource::kVal;
  throw ConfigError("unknown label source '" + name + "' (expected TRAIN or VAL)");
}

Labels FeatureSet::predictions() const { return argmax_rows(logits); }

std::vector<const Matrix*> FeatureSet::layer_views() const {
  std::vector<const Matrix*> views;
  if (layers.empty()) {
    views.push_back(&features);
  } else {
    for (const auto& l : layers) views.push_back(&l);
  }
  return views;
}

FeatureSet feature_set_from_bundle(const TensorBundle& bundle, const std::string& label_key) {
  FeatureSet fs;
  fs.name = bundle.name;
  fs.features = bundle.at("feat").to_matrix();
  fs.logits = bundle.at("logit").to_matrix();
  for (int l = 0; l < layer_count(bundle); ++l) fs.layers.push_back(bundle.at(layer_key(l)).to_matrix());
  if (bundle.has("input")) fs.inputs = bundle.at("input").to_matrix();
  if (bundle.has(label_key)) fs.labels = bundle.at(label_key).to_labels();
  return fs;
}

FeatureSet feature_set_from_model(const ClassifierModel& model, const Matrix& inputs, std::optional<Labels> labels,
                                  std::string name) {
  ForwardTrace trace = forward_trace(model, inputs);
  FeatureSet fs;
  fs.name = std::move(name);
  fs.features = std::move(trace.penultimate);
  fs.logits = std::move(trace.logits);
  fs.layers = std::move(trace.activations);
  fs.inputs = inputs;
  fs.labels = std::move(labels);
  return fs;
}

const FeatureSet& FitContext::train() const {
  if (!id_train) throw MissingInputError("fit context has no ID training split");
  return *id_train;
}

const FeatureSet& FitContext::val() const {
  if (!id_val) throw MissingInputError("fit context has no ID validation split");
  return *id_val;
}

const ClassifierModel& FitContext::require_model(const std::string& method) const {
  if (!model) throw MissingInputError(method + " requires model access");
  return *model;
}

const FeatureSet& FitContext::require_ood_val(const std::string& method) const {
  if (!ood_val) throw MissingInputError("missing ood_val: " + method + " tunes on an OOD validation split");
  return *ood_val;
}

const FeatureSet& FitContext::label_fit_set() const {
  const FeatureSet& set = label_source == LabelSource::kTrain ? train() : val();
  if (!set.labels) {
    throw MissingInputError("label source " + to_string(label_source) + " selected but split '" + set.name +
                            "' carries no labels");
  }
  return set;
}

const std::vector<std::string>& benchmark_methods() {
  static const std::vector<std::string> methods = {
      "msp", "tempscale", "odin", "gen", "mls", "ebo", "react", "rankfeat", "dice", "ash",
      "mds", "mdsens", "rmds", "klm", "openmax", "she", "gram", "knn", "vim", "gradnorm"};
  return methods;
}

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods = [] {
    auto m = benchmark_methods();
    m.push_back("odin_notemp");
    m.push_back("odin_nopert");
    return m;
  }();
  return methods;
}

bool is_class_statistic_method(const std::string& method) {
  static const std::vector<std::string> methods = {"mds", "rmds", "mdsens", "gram", "openmax", "she"};
  return std::find(methods.begin(), methods.end(), method) != methods.end();
}

std::unique_ptr<Detector> make_detector(const std::string& method, const nlohmann::json& overrides) {
  if (!overrides.is_null() && !overrides.is_object()) throw ConfigError("detector overrides must be a JSON object");
  if (method == "msp") return make_msp(overrides);
  if (method == "tempscale") return make_tempscale(overrides);
  if (method == "odin" || method == "odin_notemp" || method == "odin_nopert") return make_odin(overrides, method);
  if (method == "gen") return make_gen(overrides);
  if (method == "mls") return make_mls(overrides);
  if (method == "ebo") return make_ebo(overrides);
  if (method == "gradnorm") return make_gradnorm(overrides);
  if (method == "react") return make_react(overrides);
  if (method == "rankfeat") return make_rankfeat(overrides);
  if (method == "dice") return make_dice(overrides);
  if (method == "ash") return make_ash(overrides);
  if (method == "mds") return make_mds(overrides);
  if (method == "rmds") return make_rmds(overrides);
  if (method == "mdsens") return make_mdsens(overrides);
  if (method == "klm") return make_klm(overrides);
  if (method == "openmax") return make_openmax(overrides);
  if (method == "she") return make_she(overrides);
  if (method == "gram") return make_gram(overrides);
  if (method == "knn") return make_knn(overrides);
  if (method == "vim") return make_vim(overrides);
  throw ConfigError("unknown detector '" + method + "'");
}

void save_detector(const Detector& detector, const std::filesystem::path& dir) {
  TensorBundle store;
  store.name = detector.method();
  store.metadata["method"] = detector.method();
  store.metadata["params"] = detector.params();
  detector.save_tensors(store);
  write_tensor_store(store, dir);
}

std::unique_ptr<Detector> load_detector(const std::filesystem::path& dir) {
  const TensorBundle store = read_tensor_store(dir);
  if (!store.metadata.contains("method")) throw ValidationError("detector state in " + dir.string() + " names no method");
  auto detector = make_detector(store.metadata["method"].get<std::string>(),
                                store.metadata.value("params", nlohmann::json::object()));
  detector->load_tensors(store);
  return detector;
}

// ---- serialization helpers ----

Tensor vector_to_tensor(const Vector& v) {
  std::vector<float> data(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  return Tensor::float32({v.size()}, std::move(data));
}

Vector tensor_to_vector(const Tensor& t) {
  auto values = t.f32();
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Eigen::Index>(i)] = values[i];
  return v;
}

void put_matrix(TensorBundle& store, const std::string& key, const Matrix& m) {
  store.tensors.insert_or_assign(key, Tensor::from_matrix(m));
}

Matrix get_matrix(const TensorBundle& store, const std::string& key) {
  const Tensor& t = store.at(key);
  if (t.shape().size() != 2) throw ValidationError("state tensor '" + key + "' is not a matrix");
  return t.to_matrix();
}

void put_vector(TensorBundle& store, const std::string& key, const Vector& v) {
  store.tensors.insert_or_assign(key, vector_to_tensor(v));
}

Vector get_vector(const TensorBundle& store, const std::string& key) { return tensor_to_vector(store.at(key)); }

void put_mask(TensorBundle& store, const std::string& key, const std::vector<bool>& mask) {
  std::vector<int32_t> values(mask.begin(), mask.end());
  const auto n = static_cast<int64_t>(values.size());
  store.tensors.insert_or_assign(key, Tensor::int32({n}, std::move(values)));
}

std::vector<bool> get_mask(const TensorBundle& store, const std::string& key) {
  auto values = store.at(key).i32();
  std::vector<bool> mask;
  for (int32_t v : values) mask.push_back(v != 0);
  return mask;
}

void put_gaussian(TensorBundle& store, const std::string& prefix, const numerics::GaussianStats& stats) {
  put_matrix(store, prefix + "means", stats.means);
  put_matrix(store, prefix + "covariance", stats.shared_covariance);
  put_matrix(store, prefix + "precision", stats.precision);
  put_vector(store, prefix + "global_mean", stats.global_mean);
  put_matrix(store, prefix + "global_covariance", stats.global_covariance);
  put_matrix(store, prefix + "global_precision", stats.global_precision);
}

numerics::GaussianStats get_gaussian(const TensorBundle& store, const std::string& prefix) {
  numerics::GaussianStats stats;
  stats.means = get_matrix(store, prefix + "means");
  stats.shared_covariance = get_matrix(store, prefix + "covariance");
  stats.precision = get_matrix(store, prefix + "precision");
  stats.global_mean = get_vector(store, prefix + "global_mean");
  stats.global_covariance = get_matrix(store, prefix + "global_covariance");
  stats.global_precision = get_matrix(store, prefix + "global_precision");
  return stats;
}

json model_spec_json(const MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden_dims", spec.hidden_dims},
          {"num_classes", spec.num_classes},
          {"seed", spec.seed}};
}

void put_model(TensorBundle& store, const std::string& prefix, const ClassifierModel& model) {
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    put_matrix(store, prefix + "layer." + std::to_string(l) + ".W", model.hidden[l].weight);
    put_vector(store, prefix + "layer." + std::to_string(l) + ".b", model.hidden[l].bias);
  }
  put_matrix(store, prefix + "head.W", model.head.weight);
  put_vector(store, prefix + "head.b", model.head.bias);
}

ClassifierModel get_model(const TensorBundle& store, const std::string& prefix, const json& spec) {
  ClassifierModel model;
  model.spec.input_dim = spec.at("input_dim").get<int>();
  model.spec.hidden_dims = spec.at("hidden_dims").get<std::vector<int>>();
  model.spec.num_classes = spec.at("num_classes").get<int>();
  model.spec.seed = spec.value("seed", uint64_t{0});
  for (std::size_t l = 0; l < model.spec.hidden_dims.size(); ++l) {
    model.hidden.push_back({get_matrix(store, prefix + "layer." + std::to_string(l) + ".W"),
                            get_vector(store, prefix + "layer." + std::to_string(l) + ".b")});
  }
  model.head = {get_matrix(store, prefix + "head.W"), get_vector(store, prefix + "head.b")};
  model.validate();
  return model;
}

Matrix class_means(const Matrix& values, std::span<const int32_t> classes, int num_classes,
                   const std::vector<bool>* row_mask, std::vector<bool>* present) {
  Matrix sums = Matrix::Zero(num_classes, values.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (row_mask && !(*row_mask)[static_cast<std::size_t>(i)]) continue;
    const int c = classes[static_cast<std::size_t>(i)];
    sums.row(c) += values.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  if (present) present->assign(static_cast<std::size_t>(num_classes), false);
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    sums.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    if (present) (*present)[static_cast<std::size_t>(c)] = true;
  }
  return sums;
}

}  // namespace noisyood::detect
