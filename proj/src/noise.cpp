#include "noisyood/noise.hpp"

#include <cmath>
#include <numeric>

#include "noisyood/error.hpp"
#include "noisyood/rng.hpp"

namespace noisyood {

namespace {

constexpr double kRowTolerance = 1e-9;

void check_rate(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("noise rate must lie in [0, 1]");
}

void check_labels(std::span<const int32_t> labels, int num_classes) {
  if (num_classes < 2) throw ValidationError("noise injection needs at least two classes");
  for (int32_t y : labels) {
    if (y < 0 || y >= num_classes) throw ValidationError("label " + std::to_string(y) + " outside [0, C)");
  }
}

// Uniform draw over the C - 1 classes other than `current`.
int32_t other_class(int32_t current, int num_classes, Philox& rng) {
  auto draw = static_cast<int32_t>(rng.below(static_cast<uint64_t>(num_classes - 1)));
  return draw >= current ? draw + 1 : draw;
}

}  // namespace

TransitionMatrix::TransitionMatrix(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols() || m_.rows() < 2) throw ValidationError("transition matrix must be square with C >= 2");
  for (Eigen::Index i = 0; i < m_.rows(); ++i) {
    for (Eigen::Index j = 0; j < m_.cols(); ++j) {
      if (!(m_(i, j) >= 0.0) || !std::isfinite(m_(i, j))) {
        throw ValidationError("transition matrix has a negative or non-finite entry");
      }
    }
    if (std::abs(m_.row(i).sum() - 1.0) > kRowTolerance) {
      throw ValidationError("transition matrix row " + std::to_string(i) + " does not sum to 1");
    }
  }
}

TransitionMatrix TransitionMatrix::identity(int num_classes) {
  return TransitionMatrix(Matrix::Identity(num_classes, num_classes));
}

nlohmann::json TransitionMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m_.rows(); ++i) {
    std::vector<double> row(m_.row(i).data(), m_.row(i).data() + m_.cols());
    rows.push_back(row);
  }
  return rows;
}

TransitionMatrix TransitionMatrix::from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != m.cols()) throw ValidationError("ragged transition matrix");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return TransitionMatrix(std::move(m));
}

std::string to_string(NoiseModel model) {
  switch (model) {
    case NoiseModel::kUniform: return "SU";
    case NoiseModel::kClassConditional: return "SCC";
    case NoiseModel::kReal: return "REAL";
  }
  return "?";
}

NoiseModel noise_model_from_string(const std::string& name) {
  if (name == "SU") return NoiseModel::kUniform;
  if (name == "SCC") return NoiseModel::kClassConditional;
  if (name == "REAL") return NoiseModel::kReal;
  throw ConfigError("unknown noise model '" + name + "' (expected SU, SCC or REAL)");
}

void NoiseSpec::validate(std::size_t num_samples) const {
  check_rate(rate);
  if (model == NoiseModel::kClassConditional && !transition) {
    throw ValidationError("SCC noise requires a transition matrix");
  }
  if (model == NoiseModel::kReal) {
    if (!noisy_labels) throw ValidationError("REAL noise requires an external noisy label tensor");
    if (noisy_labels->size() != num_samples) {
      throw ValidationError("REAL noisy labels have length " + std::to_string(noisy_labels->size()) +
                            ", expected " + std::to_string(num_samples));
    }
  }
}

nlohmann::json NoiseSpec::to_json() const {
  nlohmann::json j = {{"model", to_string(model)}, {"rate", rate}, {"seed", seed}};
  if (transition) j["transition"] = transition->to_json();
  if (bernoulli) j["bernoulli"] = true;
  return j;
}

Labels inject_uniform(std::span<const int32_t> labels, int num_classes, double rate, uint64_t seed) {
  check_rate(rate);
  check_labels(labels, num_classes);
  const std::size_t n = labels.size();
  const auto flips = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));

  Philox rng = Philox(seed).split("uniform-noise");
  // Partial Fisher-Yates: the first `flips` entries of `order` are the chosen positions.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < flips; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
  }
  Labels out(labels.begin(), labels.end());
  for (std::size_t i = 0; i < flips; ++i) {
    out[order[i]] = other_class(out[order[i]], num_classes, rng);
  }
  return out;
}

Labels inject_uniform_bernoulli(std::span<const int32_t> labels, int num_classes, double rate, uint64_t seed) {
  check_rate(rate);
  check_labels(labels, num_classes);
  Philox rng = Philox(seed).split("uniform-noise-bernoulli");
  Labels out(labels.begin(), labels.end());
  for (auto& y : out) {
    if (rng.uniform() < rate) y = other_class(y, num_classes, rng);
  }
  return out;
}

Labels inject_class_conditional(std::span<const int32_t> labels, const TransitionMatrix& transition, uint64_t seed) {
  const int c = transition.num_classes();
  check_labels(labels, c);
  Philox rng = Philox(seed).split("class-conditional-noise");
  Labels out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int clean = labels[i];
    const double u = rng.uniform();
    double cumulative = 0.0;
    int32_t chosen = static_cast<int32_t>(c - 1);
    // Inverse-CDF over the row; trailing zero-mass classes are never chosen.
    for (int j = 0; j < c; ++j) {
      cumulative += transition(clean, j);
      if (u < cumulative) {
        chosen = j;
        break;
      }
    }
    while (chosen > 0 && transition(clean, chosen) == 0.0) --chosen;
    out[i] = chosen;
  }
  return out;
}

TransitionEstimate estimate_transition(std::span<const int32_t> clean, std::span<const int32_t> noisy, int num_classes) {
  if (clean.size() != noisy.size()) throw ValidationError("estimate_transition: label vectors differ in length");
  check_labels(clean, num_classes);
  check_labels(noisy, num_classes);
  Matrix counts = Matrix::Zero(num_classes, num_classes);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    counts(clean[i], noisy[i]) += 1.0;
    mismatches += clean[i] != noisy[i];
  }
  for (int c = 0; c < num_classes; ++c) {
    const double total = counts.row(c).sum();
    if (total == 0.0) {
      throw ValidationError("estimate_transition: class " + std::to_string(c) + " is absent from the clean labels");
    }
    counts.row(c) /= total;
  }
  TransitionEstimate est{TransitionMatrix(std::move(counts)),
                         clean.empty() ? 0.0 : static_cast<double>(mismatches) / static_cast<double>(clean.size())};
  return est;
}

Labels apply_noise(const NoiseSpec& spec, std::span<const int32_t> clean, int num_classes) {
  spec.validate(clean.size());
  switch (spec.model) {
    case NoiseModel::kUniform:
      return spec.bernoulli ? inject_uniform_bernoulli(clean, num_classes, spec.rate, spec.seed)
                            : inject_uniform(clean, num_classes, spec.rate, spec.seed);
    case NoiseModel::kClassConditional:
      if (spec.transition->num_classes() != num_classes) {
        throw ValidationError("transition matrix size does not match class count");
      }
      return inject_class_conditional(clean, *spec.transition, spec.seed);
    case NoiseModel::kReal:
      check_labels(*spec.noisy_labels, num_classes);
      return *spec.noisy_labels;
  }
  throw ValidationError("unknown noise model");
}

void attach_noisy_labels(TensorBundle& bundle, const std::string& tag, const Labels& noisy, const NoiseSpec& spec) {
  if (bundle.num_rows() != static_cast<int64_t>(noisy.size())) {
    throw ValidationError("noisy label count does not match bundle rows");
  }
  bundle.tensors.insert_or_assign("label.noisy." + tag, Tensor::from_labels(noisy));
  nlohmann::json record = spec.to_json();
  if (bundle.has("label")) {
    const Labels clean = bundle.at("label").to_labels();
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) mismatches += clean[i] != noisy[i];
    record["realised_rate"] = clean.empty() ? 0.0 : static_cast<double>(mismatches) / static_cast<double>(clean.size());
  }
  bundle.metadata["noise"][tag] = std::move(record);
}

}  // namespace noisyood
