#include "noisyood/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "noisyood/error.hpp"

namespace noisyood {

std::string to_string(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "int32";
}

DType dtype_from_string(const std::string& name) {
  if (name == "float32") return DType::kFloat32;
  if (name == "int32") return DType::kInt32;
  throw ValidationError("unknown dtype '" + name + "'");
}

namespace {

int64_t shape_product(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t s : shape) {
    if (s < 0) throw ValidationError("negative dimension in tensor shape");
    n *= s;
  }
  return n;
}

}  // namespace

Tensor Tensor::float32(std::vector<int64_t> shape, std::vector<float> data) {
  if (shape_product(shape) != static_cast<int64_t>(data.size())) {
    throw ValidationError("float32 tensor: shape does not match value count");
  }
  Tensor t;
  t.dtype_ = DType::kFloat32;
  t.shape_ = std::move(shape);
  t.f32_ = std::move(data);
  return t;
}

Tensor Tensor::int32(std::vector<int64_t> shape, std::vector<int32_t> data) {
  if (shape_product(shape) != static_cast<int64_t>(data.size())) {
    throw ValidationError("int32 tensor: shape does not match value count");
  }
  Tensor t;
  t.dtype_ = DType::kInt32;
  t.shape_ = std::move(shape);
  t.i32_ = std::move(data);
  return t;
}

Tensor Tensor::from_matrix(const Matrix& m) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      data[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
    }
  }
  return float32({m.rows(), m.cols()}, std::move(data));
}

Tensor Tensor::from_labels(const Labels& labels) {
  return int32({static_cast<int64_t>(labels.size())}, labels);
}

int64_t Tensor::numel() const { return shape_product(shape_); }

std::span<const float> Tensor::f32() const {
  if (dtype_ != DType::kFloat32) throw ValidationError("tensor is not float32");
  return f32_;
}
std::span<const int32_t> Tensor::i32() const {
  if (dtype_ != DType::kInt32) throw ValidationError("tensor is not int32");
  return i32_;
}
std::span<float> Tensor::f32() {
  if (dtype_ != DType::kFloat32) throw ValidationError("tensor is not float32");
  return f32_;
}
std::span<int32_t> Tensor::i32() {
  if (dtype_ != DType::kInt32) throw ValidationError("tensor is not int32");
  return i32_;
}

Matrix Tensor::to_matrix() const {
  if (shape_.size() > 2) throw ValidationError("to_matrix: tensor rank > 2");
  const int64_t r = shape_.empty() ? 1 : shape_[0];
  const int64_t c = shape_.size() == 2 ? shape_[1] : 1;
  Matrix m(r, c);
  if (dtype_ == DType::kFloat32) {
    for (int64_t k = 0; k < r * c; ++k) m.data()[k] = static_cast<double>(f32_[static_cast<std::size_t>(k)]);
  } else {
    for (int64_t k = 0; k < r * c; ++k) m.data()[k] = static_cast<double>(i32_[static_cast<std::size_t>(k)]);
  }
  return m;
}

Labels Tensor::to_labels() const {
  auto values = i32();
  return Labels(values.begin(), values.end());
}

bool Tensor::all_finite() const {
  if (dtype_ == DType::kInt32) return true;
  for (float v : f32_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.dtype_ != b.dtype_ || a.shape_ != b.shape_) return false;
  if (a.dtype_ == DType::kInt32) return a.i32_ == b.i32_;
  // Bitwise comparison so that NaN payloads and signed zeros count.
  return a.f32_.size() == b.f32_.size() &&
         std::memcmp(a.f32_.data(), b.f32_.data(), a.f32_.size() * sizeof(float)) == 0;
}

const Tensor& TensorBundle::at(const std::string& key) const {
  auto it = tensors.find(key);
  if (it == tensors.end()) {
    throw ValidationError("bundle '" + name + "' has no tensor '" + key + "'");
  }
  return it->second;
}

int64_t TensorBundle::num_rows() const {
  if (tensors.empty()) return 0;
  return tensors.begin()->second.rows();
}

namespace {

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

bool is_label_key(const std::string& key) {
  return key == "label" || starts_with(key, "label.");
}

}  // namespace

void TensorBundle::validate() const {
  std::optional<int64_t> n;
  for (const auto& [key, t] : tensors) {
    if (t.shape().empty()) {
      throw ValidationError("tensor '" + key + "' in bundle '" + name + "' has no leading dimension");
    }
    if (!n) n = t.rows();
    if (t.rows() != *n) {
      throw ValidationError("tensor '" + key + "' in bundle '" + name + "' has leading dimension " +
                            std::to_string(t.rows()) + ", expected " + std::to_string(*n));
    }
    if (is_label_key(key)) {
      if (t.dtype() != DType::kInt32 || t.shape().size() != 1) {
        throw ValidationError("tensor '" + key + "' must be a rank-1 int32 tensor");
      }
    } else {
      if (t.dtype() != DType::kFloat32 || t.shape().size() != 2) {
        throw ValidationError("tensor '" + key + "' must be a rank-2 float32 tensor");
      }
      if (!t.all_finite()) {
        throw ValidationError("tensor '" + key + "' in bundle '" + name + "' contains NaN or Inf");
      }
    }
  }
  const int64_t num_classes = has("logit") ? at("logit").shape()[1] : -1;
  for (const auto& [key, t] : tensors) {
    if (!is_label_key(key)) continue;
    for (int32_t v : t.i32()) {
      if (v < 0 || (num_classes > 0 && v >= num_classes)) {
        throw ValidationError("tensor '" + key + "' in bundle '" + name + "' has label " +
                              std::to_string(v) + " outside [0, C)");
      }
    }
  }
  int layers = 0;
  while (has(layer_key(layers))) ++layers;
  for (const auto& [key, t] : tensors) {
    if (starts_with(key, "act.")) {
      const std::string index = key.substr(4);
      bool numeric = !index.empty() && index.find_first_not_of("0123456789") == std::string::npos;
      if (!numeric || std::stoi(index) >= layers) {
        throw ValidationError("activation key '" + key + "' is not part of a contiguous act.0.. sequence");
      }
    }
  }
}

void SplitSet::validate() const {
  train.validate();
  val.validate();
  test.validate();
  const auto width = [](const TensorBundle& b, const char* key) -> int64_t {
    return b.has(key) ? b.at(key).shape()[1] : -1;
  };
  const int64_t d = width(train, "feat");
  for (const TensorBundle* b : {&val, &test}) {
    if (width(*b, "feat") != d) throw ValidationError("split '" + b->name + "' feature width differs from train");
    if (width(*b, "logit") != width(train, "logit")) {
      throw ValidationError("split '" + b->name + "' class count differs from train");
    }
  }
  for (const auto& ood : ood_sets) {
    ood.validate();
    if (width(ood, "feat") != d) throw ValidationError("OOD set '" + ood.name + "' feature width differs from train");
  }
  if (ood_val) {
    ood_val->validate();
    if (width(*ood_val, "feat") != d) throw ValidationError("OOD validation feature width differs from train");
  }
}

int layer_count(const TensorBundle& bundle) {
  int layers = 0;
  while (bundle.has(layer_key(layers))) ++layers;
  return layers;
}

std::string layer_key(int layer) { return "act." + std::to_string(layer); }

}  // namespace noisyood
