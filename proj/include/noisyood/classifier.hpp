#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "noisyood/tensor.hpp"

namespace noisyood {

struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int num_classes = 0;
  uint64_t seed = 0;

  void validate() const;
  int penultimate_dim() const { return hidden_dims.empty() ? input_dim : hidden_dims.back(); }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

// ReLU MLP. `hidden` holds len(hidden_dims) layers; `head` is the final linear
// map from the penultimate activations to the logits.
struct ClassifierModel {
  MlpSpec spec;
  std::vector<DenseLayer> hidden;
  DenseLayer head;
  int epoch = 0;
  std::vector<EpochRecord> training_log;

  void validate() const;
};

struct CheckpointPair {
  ClassifierModel early;  // best validation accuracy, earliest epoch on ties
  ClassifierModel last;
};

struct ForwardTrace {
  std::vector<Matrix> activations;  // post-ReLU, one per hidden layer
  Matrix penultimate;               // equals activations.back() (or the input if no hidden layers)
  Matrix logits;
};

struct TrainOptions {
  int epochs = 200;
  double learning_rate = 0.05;
  int batch_size = 64;
  double momentum = 0.9;
};

// Fresh model with weights and biases uniform in +-1/sqrt(fan_in), drawn from
// spec.seed.
ClassifierModel initialize_model(const MlpSpec& spec);

// logits = penultimate * W^T + b. Shared by the forward pass and by detectors
// that modify features or weights before recomputing logits.
Matrix apply_head(const Matrix& penultimate, const Matrix& weight, const Vector& bias);

ForwardTrace forward_trace(const ClassifierModel& model, const Matrix& inputs);
Matrix predict_logits(const ClassifierModel& model, const Matrix& inputs);

Labels argmax_rows(const Matrix& m);
double accuracy(const Matrix& logits, std::span<const int32_t> labels);

// Minibatch SGD with momentum on the mean cross-entropy. Deterministic in the
// spec seed: initialization uses split("init"), epoch e shuffles with
// split("shuffle").split(e).
CheckpointPair train(const MlpSpec& spec, const Matrix& train_x, std::span<const int32_t> train_y,
                     const Matrix& val_x, std::span<const int32_t> val_y, const TrainOptions& options);

// Bundle-based entry point: features from "feat", labels from `label_key`
// on the training bundle and "label" on the validation bundle.
CheckpointPair train(const MlpSpec& spec, const TensorBundle& train_data, const TensorBundle& val_data,
                     const TrainOptions& options, const std::string& label_key = "label");

// Gradient of log(max_c softmax(z(x) / T)_c) with respect to the input x by
// backpropagation. The max is taken at x (its index is held fixed).
Vector input_gradient_log_msp(const ClassifierModel& model, const Eigen::Ref<const Vector>& x,
                              double temperature);

// Runs forward_trace on data["feat"] and returns a bundle with
//   feat (penultimate), logit, input (the original features), label keys copied over,
//   act.<l> for every hidden layer when include_layers is set.
TensorBundle export_bundle(const ClassifierModel& model, const TensorBundle& data, bool include_layers);

// Model directories use the tensor-store layout with "layer.<i>.W"/"layer.<i>.b"
// (i = 0..len(hidden)) and the MlpSpec, epoch and training log in the manifest.
void save_model(const ClassifierModel& model, const std::filesystem::path& dir);
ClassifierModel load_model(const std::filesystem::path& dir);

}  // namespace noisyood
