#include "noisyood/classifier.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include "noisyood/bundle_io.hpp"
#include "noisyood/error.hpp"
#include "noisyood/rng.hpp"

namespace noisyood {

void MlpSpec::validate() const {
  if (input_dim < 1) throw ValidationError("MlpSpec: input_dim must be >= 1");
  if (num_classes < 2) throw ValidationError("MlpSpec: num_classes must be >= 2");
  for (int h : hidden_dims) {
    if (h < 1) throw ValidationError("MlpSpec: hidden dims must be >= 1");
  }
}

void ClassifierModel::validate() const {
  spec.validate();
  if (hidden.size() != spec.hidden_dims.size()) throw ValidationError("model layer count does not match spec");
  int fan_in = spec.input_dim;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    const auto& layer = hidden[l];
    if (layer.weight.rows() != spec.hidden_dims[l] || layer.weight.cols() != fan_in ||
        layer.bias.size() != spec.hidden_dims[l]) {
      throw ValidationError("hidden layer " + std::to_string(l) + " shape does not match spec");
    }
    fan_in = spec.hidden_dims[l];
  }
  if (head.weight.rows() != spec.num_classes || head.weight.cols() != fan_in || head.bias.size() != spec.num_classes) {
    throw ValidationError("output layer shape does not match spec");
  }
}

namespace {

DenseLayer init_layer(int fan_out, int fan_in, Philox& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  DenseLayer layer{Matrix(fan_out, fan_in), Vector(fan_out)};
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = (2.0 * rng.uniform() - 1.0) * bound;
  return layer;
}

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix z = x * layer.weight.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

// Row-wise softmax and per-row cross-entropy against labels.
Matrix row_softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double mean_cross_entropy(const Matrix& logits, std::span<const int32_t> labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

void check_labels(std::span<const int32_t> labels, int num_classes, const char* which) {
  for (int32_t y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ValidationError(std::string(which) + " label " + std::to_string(y) + " outside [0, C)");
    }
  }
}

}  // namespace

ClassifierModel initialize_model(const MlpSpec& spec) {
  spec.validate();
  Philox rng = Philox(spec.seed).split("init");
  ClassifierModel model;
  model.spec = spec;
  int fan_in = spec.input_dim;
  for (int h : spec.hidden_dims) {
    model.hidden.push_back(init_layer(h, fan_in, rng));
    fan_in = h;
  }
  model.head = init_layer(spec.num_classes, fan_in, rng);
  return model;
}

Matrix apply_head(const Matrix& penultimate, const Matrix& weight, const Vector& bias) {
  Matrix z = penultimate * weight.transpose();
  z.rowwise() += bias.transpose();
  return z;
}

ForwardTrace forward_trace(const ClassifierModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.spec.input_dim) {
    throw ValidationError("forward_trace: input width " + std::to_string(inputs.cols()) + " != input_dim " +
                          std::to_string(model.spec.input_dim));
  }
  ForwardTrace trace;
  Matrix a = inputs;
  for (const auto& layer : model.hidden) {
    a = relu(affine(a, layer));
    trace.activations.push_back(a);
  }
  trace.penultimate = std::move(a);
  trace.logits = apply_head(trace.penultimate, model.head.weight, model.head.bias);
  return trace;
}

Matrix predict_logits(const ClassifierModel& model, const Matrix& inputs) {
  return forward_trace(model, inputs).logits;
}

Labels argmax_rows(const Matrix& m) {
  Labels out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index k;
    m.row(i).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int32_t>(k);
  }
  return out;
}

double accuracy(const Matrix& logits, std::span<const int32_t> labels) {
  if (logits.rows() == 0) return 0.0;
  const Labels pred = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

CheckpointPair train(const MlpSpec& spec, const Matrix& train_x, std::span<const int32_t> train_y,
                     const Matrix& val_x, std::span<const int32_t> val_y, const TrainOptions& options) {
  spec.validate();
  if (options.epochs < 1 || options.batch_size < 1 || !(options.learning_rate > 0.0)) {
    throw ValidationError("train: epochs, batch size and learning rate must be positive");
  }
  if (train_x.cols() != spec.input_dim || val_x.cols() != spec.input_dim) {
    throw ValidationError("train: feature width does not match input_dim");
  }
  if (static_cast<Eigen::Index>(train_y.size()) != train_x.rows() ||
      static_cast<Eigen::Index>(val_y.size()) != val_x.rows()) {
    throw ValidationError("train: label count does not match feature rows");
  }
  if (train_x.rows() == 0) throw ValidationError("train: empty training set");
  check_labels(train_y, spec.num_classes, "training");
  check_labels(val_y, spec.num_classes, "validation");
  {
    std::vector<int> counts(static_cast<std::size_t>(spec.num_classes), 0);
    for (int32_t y : train_y) ++counts[static_cast<std::size_t>(y)];
    for (int c = 0; c < spec.num_classes; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        std::cerr << "warning: class " << c << " has no training samples\n";
      }
    }
  }

  ClassifierModel model = initialize_model(spec);
  const std::size_t num_layers = model.hidden.size();
  std::vector<DenseLayer> velocity;
  for (const auto& layer : model.hidden) {
    velocity.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()), Vector::Zero(layer.bias.size())});
  }
  DenseLayer head_velocity{Matrix::Zero(model.head.weight.rows(), model.head.weight.cols()),
                           Vector::Zero(model.head.bias.size())};

  const Philox shuffle_root = Philox(spec.seed).split("shuffle");
  const auto n = static_cast<std::size_t>(train_x.rows());
  std::vector<std::size_t> order(n);

  CheckpointPair result;
  double best_val_accuracy = -1.0;
  const double lr = options.learning_rate;
  const double mu = options.momentum;

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Philox shuffle = shuffle_root.split(static_cast<uint64_t>(epoch));
    shuffle.shuffle(order);

    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(options.batch_size));
      const auto b = static_cast<Eigen::Index>(stop - start);
      Matrix x(b, train_x.cols());
      Labels y(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        x.row(static_cast<Eigen::Index>(i - start)) = train_x.row(static_cast<Eigen::Index>(order[i]));
        y[i - start] = train_y[order[i]];
      }

      std::vector<Matrix> acts;  // acts[0] = input, acts[l+1] = post-ReLU of layer l
      acts.reserve(num_layers + 1);
      acts.push_back(std::move(x));
      for (const auto& layer : model.hidden) acts.push_back(relu(affine(acts.back(), layer)));
      const Matrix logits = affine(acts.back(), model.head);

      const double loss = mean_cross_entropy(logits, y);
      if (!std::isfinite(loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(start / static_cast<std::size_t>(options.batch_size)));
      }
      loss_sum += loss * static_cast<double>(b);
      const Labels pred = argmax_rows(logits);
      for (Eigen::Index i = 0; i < b; ++i) hits += pred[static_cast<std::size_t>(i)] == y[static_cast<std::size_t>(i)];

      Matrix delta = row_softmax(logits);
      for (Eigen::Index i = 0; i < b; ++i) delta(i, y[static_cast<std::size_t>(i)]) -= 1.0;
      delta /= static_cast<double>(b);

      // Gradients for the head, then back through the hidden stack.
      Matrix grad_w = delta.transpose() * acts.back();
      Vector grad_b = delta.colwise().sum().transpose();
      Matrix upstream = delta * model.head.weight;
      head_velocity.weight = mu * head_velocity.weight + grad_w;
      head_velocity.bias = mu * head_velocity.bias + grad_b;
      model.head.weight -= lr * head_velocity.weight;
      model.head.bias -= lr * head_velocity.bias;

      for (std::size_t l = num_layers; l-- > 0;) {
        const Matrix& out = acts[l + 1];
        Matrix dz = upstream.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
        grad_w = dz.transpose() * acts[l];
        grad_b = dz.colwise().sum().transpose();
        if (l > 0) upstream = dz * model.hidden[l].weight;
        velocity[l].weight = mu * velocity[l].weight + grad_w;
        velocity[l].bias = mu * velocity[l].bias + grad_b;
        model.hidden[l].weight -= lr * velocity[l].weight;
        model.hidden[l].bias -= lr * velocity[l].bias;
      }
    }

    const Matrix val_logits = predict_logits(model, val_x);
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    record.train_accuracy = static_cast<double>(hits) / static_cast<double>(n);
    record.val_loss = val_x.rows() > 0 ? mean_cross_entropy(val_logits, val_y) : 0.0;
    record.val_accuracy = accuracy(val_logits, val_y);
    model.epoch = epoch;
    model.training_log.push_back(record);

    if (record.val_accuracy > best_val_accuracy) {
      best_val_accuracy = record.val_accuracy;
      result.early = model;
    }
  }
  result.last = std::move(model);
  // The early checkpoint carries the full log so both report the same history.
  result.early.training_log = result.last.training_log;
  return result;
}

CheckpointPair train(const MlpSpec& spec, const TensorBundle& train_data, const TensorBundle& val_data,
                     const TrainOptions& options, const std::string& label_key) {
  const Labels train_y = train_data.at(label_key).to_labels();
  const Labels val_y = val_data.at("label").to_labels();
  return train(spec, train_data.at("feat").to_matrix(), train_y, val_data.at("feat").to_matrix(), val_y, options);
}

Vector input_gradient_log_msp(const ClassifierModel& model, const Eigen::Ref<const Vector>& x, double temperature) {
  if (x.size() != model.spec.input_dim) throw ValidationError("input_gradient: width mismatch");
  if (!x.allFinite()) throw NumericError("input_gradient: non-finite input");
  if (!(temperature > 0.0)) throw NumericError("input_gradient: temperature must be positive");

  std::vector<Vector> acts;
  acts.push_back(x);
  for (const auto& layer : model.hidden) {
    acts.push_back((layer.weight * acts.back() + layer.bias).cwiseMax(0.0));
  }
  const Vector z = model.head.weight * acts.back() + model.head.bias;
  Eigen::Index k;
  z.maxCoeff(&k);
  Vector p = ((z.array() - z.maxCoeff()) / temperature).exp();
  p /= p.sum();

  // d/dz [z_k / T - logsumexp(z / T)] = (e_k - p) / T
  Vector dz = -p / temperature;
  dz[k] += 1.0 / temperature;
  Vector upstream = model.head.weight.transpose() * dz;
  for (std::size_t l = model.hidden.size(); l-- > 0;) {
    const Vector mask = (acts[l + 1].array() > 0.0).cast<double>();
    upstream = model.hidden[l].weight.transpose() * upstream.cwiseProduct(mask);
  }
  return upstream;
}

TensorBundle export_bundle(const ClassifierModel& model, const TensorBundle& data, bool include_layers) {
  const Matrix inputs = data.at("feat").to_matrix();
  const ForwardTrace trace = forward_trace(model, inputs);
  TensorBundle out;
  out.name = data.name;
  out.metadata = data.metadata;
  out.tensors.emplace("input", data.at("feat"));
  out.tensors.emplace("feat", Tensor::from_matrix(trace.penultimate));
  out.tensors.emplace("logit", Tensor::from_matrix(trace.logits));
  for (const auto& [key, tensor] : data.tensors) {
    if (key == "label" || key.rfind("label.", 0) == 0) out.tensors.emplace(key, tensor);
  }
  if (include_layers) {
    for (std::size_t l = 0; l < trace.activations.size(); ++l) {
      out.tensors.emplace(layer_key(static_cast<int>(l)), Tensor::from_matrix(trace.activations[l]));
    }
  }
  out.validate();
  return out;
}

namespace {

std::string weight_key(std::size_t layer) { return "layer." + std::to_string(layer) + ".W"; }
std::string bias_key(std::size_t layer) { return "layer." + std::to_string(layer) + ".b"; }

Tensor vector_tensor(const Vector& v) {
  Matrix m = v.transpose();
  Tensor t = Tensor::from_matrix(m);
  auto values = t.f32();
  return Tensor::float32({v.size()}, std::vector<float>(values.begin(), values.end()));
}

}  // namespace

void save_model(const ClassifierModel& model, const std::filesystem::path& dir) {
  model.validate();
  TensorBundle store;
  store.name = "model";
  std::vector<const DenseLayer*> layers;
  for (const auto& layer : model.hidden) layers.push_back(&layer);
  layers.push_back(&model.head);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    store.tensors.emplace(weight_key(l), Tensor::from_matrix(layers[l]->weight));
    store.tensors.emplace(bias_key(l), vector_tensor(layers[l]->bias));
  }
  nlohmann::json log = nlohmann::json::array();
  for (const auto& r : model.training_log) {
    log.push_back({{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"train_accuracy", r.train_accuracy},
                   {"val_loss", r.val_loss},
                   {"val_accuracy", r.val_accuracy}});
  }
  store.metadata["spec"] = {{"input_dim", model.spec.input_dim},
                            {"hidden_dims", model.spec.hidden_dims},
                            {"num_classes", model.spec.num_classes},
                            {"activation", "relu"},
                            {"seed", model.spec.seed}};
  store.metadata["epoch"] = model.epoch;
  store.metadata["training_log"] = std::move(log);
  write_tensor_store(store, dir);
}

ClassifierModel load_model(const std::filesystem::path& dir) {
  const TensorBundle store = read_tensor_store(dir);
  if (!store.metadata.contains("spec")) throw ValidationError("model manifest lacks a spec in " + dir.string());
  const auto& s = store.metadata["spec"];
  ClassifierModel model;
  model.spec.input_dim = s.at("input_dim").get<int>();
  model.spec.hidden_dims = s.at("hidden_dims").get<std::vector<int>>();
  model.spec.num_classes = s.at("num_classes").get<int>();
  model.spec.seed = s.at("seed").get<uint64_t>();
  model.epoch = store.metadata.value("epoch", 0);
  for (const auto& r : store.metadata.value("training_log", nlohmann::json::array())) {
    model.training_log.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(),
                                  r.at("train_accuracy").get<double>(), r.at("val_loss").get<double>(),
                                  r.at("val_accuracy").get<double>()});
  }
  const std::size_t num_layers = model.spec.hidden_dims.size() + 1;
  for (std::size_t l = 0; l < num_layers; ++l) {
    DenseLayer layer{store.at(weight_key(l)).to_matrix(), store.at(bias_key(l)).to_matrix().col(0)};
    if (l + 1 < num_layers) {
      model.hidden.push_back(std::move(layer));
    } else {
      model.head = std::move(layer);
    }
  }
  model.validate();
  return model;
}

}  // namespace noisyood
