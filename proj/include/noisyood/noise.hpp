#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "noisyood/tensor.hpp"

namespace noisyood {

// Row-stochastic C x C matrix; entry (i, j) = P(noisy = j | clean = i).
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  explicit TransitionMatrix(Matrix m);  // validates

  static TransitionMatrix identity(int num_classes);

  const Matrix& matrix() const { return m_; }
  int num_classes() const { return static_cast<int>(m_.rows()); }
  double operator()(int clean, int noisy) const { return m_(clean, noisy); }

  nlohmann::json to_json() const;
  static TransitionMatrix from_json(const nlohmann::json& j);

 private:
  Matrix m_;
};

enum class NoiseModel { kUniform, kClassConditional, kReal };

std::string to_string(NoiseModel model);  // "SU", "SCC", "REAL"
NoiseModel noise_model_from_string(const std::string& name);

struct NoiseSpec {
  NoiseModel model = NoiseModel::kUniform;
  double rate = 0.0;
  std::optional<TransitionMatrix> transition;  // SCC
  std::optional<Labels> noisy_labels;          // REAL
  uint64_t seed = 0;
  // Per-sample Bernoulli flips instead of an exact flip count (SU only).
  bool bernoulli = false;

  void validate(std::size_t num_samples) const;
  nlohmann::json to_json() const;  // omits the REAL label payload
};

// Flips exactly round(rate * N) positions chosen uniformly without
// replacement; each flipped label moves to a uniformly drawn different class.
Labels inject_uniform(std::span<const int32_t> labels, int num_classes, double rate, uint64_t seed);

// Each position independently flips with probability `rate` (alternative SU).
Labels inject_uniform_bernoulli(std::span<const int32_t> labels, int num_classes, double rate, uint64_t seed);

// Each output label is drawn from the transition row of its clean label.
Labels inject_class_conditional(std::span<const int32_t> labels, const TransitionMatrix& transition, uint64_t seed);

struct TransitionEstimate {
  TransitionMatrix transition;
  double rate = 0.0;
};

TransitionEstimate estimate_transition(std::span<const int32_t> clean, std::span<const int32_t> noisy,
                                       int num_classes);

// Dispatches on spec.model.
Labels apply_noise(const NoiseSpec& spec, std::span<const int32_t> clean, int num_classes);

// Writes "label.noisy.<tag>" into the bundle and records the NoiseSpec (plus the
// realised rate) under metadata["noise"][tag].
void attach_noisy_labels(TensorBundle& bundle, const std::string& tag, const Labels& noisy, const NoiseSpec& spec);

}  // namespace noisyood
