#pragma once

// Shared helpers for the detector implementations. Not installed.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "noisyood/detectors.hpp"
#include "noisyood/error.hpp"

namespace noisyood::detect {

using nlohmann::json;

template <typename T>
T param_or(const json& overrides, const char* key, T fallback) {
  if (overrides.is_object() && overrides.contains(key) && !overrides[key].is_null()) return overrides[key].get<T>();
  return fallback;
}

inline bool pinned(const json& overrides, const char* key) {
  return overrides.is_object() && overrides.contains(key) && !overrides[key].is_null();
}

// Tuning runs only when an OOD validation split exists and tuning is not disabled.
inline bool tuning_enabled(const json& overrides, const FitContext& ctx) {
  return ctx.ood_val != nullptr && param_or(overrides, "tune", true);
}

// Picks the candidate with the highest tuning AUROC; earlier candidates win ties.
template <typename Candidate>
std::size_t select_best(const std::vector<Candidate>& candidates,
                        const std::function<std::vector<double>(const Candidate&, const FeatureSet&)>& scorer,
                        const FitContext& ctx, std::vector<double>* aurocs = nullptr) {
  std::size_t best = 0;
  double best_auroc = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double a = tuning_auroc(scorer(candidates[i], ctx.val()), scorer(candidates[i], *ctx.ood_val));
    if (aurocs) aurocs->push_back(a);
    if (a > best_auroc) {
      best_auroc = a;
      best = i;
    }
  }
  return best;
}

inline RowVector row(const Matrix& m, Eigen::Index i) { return m.row(i); }

// Tensor conversions for state serialization.
Tensor vector_to_tensor(const Vector& v);
Vector tensor_to_vector(const Tensor& t);
void put_matrix(TensorBundle& store, const std::string& key, const Matrix& m);
Matrix get_matrix(const TensorBundle& store, const std::string& key);
void put_vector(TensorBundle& store, const std::string& key, const Vector& v);
Vector get_vector(const TensorBundle& store, const std::string& key);
void put_mask(TensorBundle& store, const std::string& key, const std::vector<bool>& mask);
std::vector<bool> get_mask(const TensorBundle& store, const std::string& key);
void put_gaussian(TensorBundle& store, const std::string& prefix, const numerics::GaussianStats& stats);
numerics::GaussianStats get_gaussian(const TensorBundle& store, const std::string& prefix);
void put_model(TensorBundle& store, const std::string& prefix, const ClassifierModel& model);
ClassifierModel get_model(const TensorBundle& store, const std::string& prefix, const json& spec);
json model_spec_json(const MlpSpec& spec);

// Per-class arithmetic means over rows with mask set; absent classes stay zero.
Matrix class_means(const Matrix& values, std::span<const int32_t> classes, int num_classes,
                   const std::vector<bool>* row_mask, std::vector<bool>* present);

std::unique_ptr<Detector> make_msp(const json& o);
std::unique_ptr<Detector> make_tempscale(const json& o);
std::unique_ptr<Detector> make_odin(const json& o, const std::string& variant);
std::unique_ptr<Detector> make_gen(const json& o);
std::unique_ptr<Detector> make_mls(const json& o);
std::unique_ptr<Detector> make_ebo(const json& o);
std::unique_ptr<Detector> make_gradnorm(const json& o);
std::unique_ptr<Detector> make_react(const json& o);
std::unique_ptr<Detector> make_rankfeat(const json& o);
std::unique_ptr<Detector> make_dice(const json& o);
std::unique_ptr<Detector> make_ash(const json& o);
std::unique_ptr<Detector> make_mds(const json& o);
std::unique_ptr<Detector> make_rmds(const json& o);
std::unique_ptr<Detector> make_mdsens(const json& o);
std::unique_ptr<Detector> make_klm(const json& o);
std::unique_ptr<Detector> make_openmax(const json& o);
std::unique_ptr<Detector> make_she(const json& o);
std::unique_ptr<Detector> make_gram(const json& o);
std::unique_ptr<Detector> make_knn(const json& o);
std::unique_ptr<Detector> make_vim(const json& o);

}  // namespace noisyood::detect
