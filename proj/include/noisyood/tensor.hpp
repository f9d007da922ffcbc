#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace noisyood {

// Internal dense types. Stored arrays are float32/int32; computation is double.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Labels = std::vector<int32_t>;

enum class DType { kFloat32, kInt32 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& name);

// Contiguous row-major array with a shape. Holds exactly one of the two storage
// vectors, matching dtype.
class Tensor {
 public:
  Tensor() = default;

  static Tensor float32(std::vector<int64_t> shape, std::vector<float> data);
  static Tensor int32(std::vector<int64_t> shape, std::vector<int32_t> data);

  static Tensor from_matrix(const Matrix& m);
  static Tensor from_labels(const Labels& labels);

  DType dtype() const { return dtype_; }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  int64_t numel() const;
  std::size_t byte_size() const { return static_cast<std::size_t>(numel()) * 4; }

  std::span<const float> f32() const;
  std::span<const int32_t> i32() const;
  std::span<float> f32();
  std::span<int32_t> i32();

  // Rank-2 float view as double matrix (rank-1 tensors become N x 1).
  Matrix to_matrix() const;
  Labels to_labels() const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  DType dtype_ = DType::kFloat32;
  std::vector<int64_t> shape_;
  std::vector<float> f32_;
  std::vector<int32_t> i32_;
};

// Named set of tensors for one dataset split. Keys:
//   "feat"         N x d float32
//   "logit"        N x C float32
//   "label"        N int32, values in [0, C)
//   "act.<l>"      N x d_l float32, hidden-layer activations
//   "input"        N x d_in float32, raw model inputs (needed for input perturbation)
//   "label.noisy.<tag>"  N int32
// `metadata` is carried into the manifest as extension fields.
struct TensorBundle {
  std::string name;
  std::map<std::string, Tensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  bool has(const std::string& key) const { return tensors.count(key) != 0; }
  const Tensor& at(const std::string& key) const;
  int64_t num_rows() const;

  // Validates the shared-N / label-range / finiteness invariants.
  void validate() const;
};

struct SplitSet {
  TensorBundle train;
  TensorBundle val;
  TensorBundle test;
  std::vector<TensorBundle> ood_sets;
  // Held-out OOD data reserved for hyperparameter tuning; never scored.
  std::optional<TensorBundle> ood_val;

  void validate() const;
};

// Number of "act.<l>" keys, which must be contiguous from 0.
int layer_count(const TensorBundle& bundle);
std::string layer_key(int layer);

}  // namespace noisyood
