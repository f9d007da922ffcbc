#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noisyood/classifier.hpp"
#include "noisyood/numerics.hpp"
#include "noisyood/tensor.hpp"

namespace noisyood::detect {

// Which labels the class-statistic detectors (MDS, RMDS, MDSEnsemble, GRAM,
// OpenMax, SHE) fit on: the possibly noisy training labels or the clean
// validation labels.
enum class LabelSource { kTrain, kVal };

std::string to_string(LabelSource source);  // "TRAIN" / "VAL"
LabelSource label_source_from_string(const std::string& name);

// Everything a detector may read for one split. `features` are the
// penultimate activations; `layers` the hidden activations in network order
// (the last one equals `features` for traced MLPs).
struct FeatureSet {
  std::string name;
  Matrix features;
  Matrix logits;
  std::vector<Matrix> layers;
  std::optional<Matrix> inputs;
  std::optional<Labels> labels;

  Eigen::Index size() const { return features.rows(); }
  int num_classes() const { return static_cast<int>(logits.cols()); }
  Labels predictions() const;
  // Hidden layers if present, else the penultimate features as a single layer.
  std::vector<const Matrix*> layer_views() const;
};

// Reads "feat", "logit", "act.<l>", "input" and the label tensor `label_key`
// (when present) from an exported bundle.
FeatureSet feature_set_from_bundle(const TensorBundle& bundle, const std::string& label_key = "label");
FeatureSet feature_set_from_model(const ClassifierModel& model, const Matrix& inputs,
                                  std::optional<Labels> labels = std::nullopt, std::string name = {});

struct FitContext {
  const FeatureSet* id_train = nullptr;  // labels may be noisy
  const FeatureSet* id_val = nullptr;    // clean labels
  const FeatureSet* ood_val = nullptr;   // optional, for hyperparameter tuning
  const ClassifierModel* model = nullptr;
  LabelSource label_source = LabelSource::kTrain;

  const FeatureSet& train() const;
  const FeatureSet& val() const;
  const ClassifierModel& require_model(const std::string& method) const;
  const FeatureSet& require_ood_val(const std::string& method) const;
  // The split and labels class-statistic methods consume under label_source.
  const FeatureSet& label_fit_set() const;
};

// A fitted post-hoc scoring function; higher scores mean "more in-distribution".
class Detector {
 public:
  virtual ~Detector() = default;

  virtual std::string method() const = 0;
  virtual bool uses_class_labels() const { return false; }

  virtual void fit(const FitContext& ctx) = 0;
  virtual std::vector<double> score(const FeatureSet& data) const = 0;

  // Hyperparameters and scalar fitted values, echoed into run reports.
  virtual nlohmann::json params() const = 0;

  // Array-valued fitted state, for save_detector/load_detector.
  virtual void save_tensors(TensorBundle& store) const = 0;
  virtual void load_tensors(const TensorBundle& store) = 0;
};

// The twenty benchmark methods, in report order.
const std::vector<std::string>& benchmark_methods();
// Benchmark methods plus the odin_notemp / odin_nopert ablations.
const std::vector<std::string>& known_methods();
bool is_class_statistic_method(const std::string& method);

// `overrides` pins hyperparameters (and disables tuning of the pinned ones);
// see each method's params() for the accepted keys.
std::unique_ptr<Detector> make_detector(const std::string& method, const nlohmann::json& overrides = {});

void save_detector(const Detector& detector, const std::filesystem::path& dir);
std::unique_ptr<Detector> load_detector(const std::filesystem::path& dir);

// Per-sample scoring formulas. Logit-only methods take one logit row z.
namespace score {

double msp(const RowVector& z);
double tempscale(const RowVector& z, double temperature);
double gen(const RowVector& z, double gamma, int top_m);
double mls(const RowVector& z);
double ebo(const RowVector& z, double temperature);
double gradnorm(const RowVector& f, const RowVector& z, double temperature);

// -min_k KL(softmax(z) || templates_k), probabilities floored at 1e-12.
double klm(const RowVector& z, const Matrix& templates, const std::vector<bool>& template_present);
double kl_divergence(const Vector& p, const Vector& q);

double mds(const RowVector& f, const numerics::GaussianStats& stats);
double rmds(const RowVector& f, const numerics::GaussianStats& stats);
double she(const RowVector& f, const RowVector& z, const Matrix& class_means);

// L2-normalised query vs. L2-normalised references.
double knn(const RowVector& f, const Matrix& normalized_reference, int k);

double react(const RowVector& f, const Matrix& weight, const Vector& bias, double clip);
double rankfeat(const RowVector& f, const Matrix& weight, const Vector& bias);
double ash(const RowVector& f, const Matrix& weight, const Vector& bias, double percentile);
// Feature vector after ASH-S pruning and rescaling.
RowVector ash_shape(const RowVector& f, double percentile);
// Head weights with all but the top ceil((1 - p/100) d) contributions per row zeroed.
Matrix dice_mask(const Matrix& weight, const Vector& mean_features, double sparsity);

double vim(const RowVector& f, const RowVector& z, const Vector& center, const Matrix& complement_basis, double alpha);
Vector vim_residual(const RowVector& f, const Vector& center, const Matrix& complement_basis);

struct OpenMaxModel {
  Matrix class_means;                       // C x C, mean logit vectors
  std::vector<bool> present;                // class had correctly classified fit samples
  std::vector<numerics::WeibullFit> fits;   // per class
  int alpha_rank = 10;
};
double openmax(const RowVector& z, const OpenMaxModel& model);

// GRAM deviation of one bound check.
double gram_delta(double lo, double hi, double value);
// Upper-triangular entries of sign(G) |G|^(1/p), G = (A^p)(A^p)^T, where A is
// the activation row folded into fold_rows(d) x (d / fold_rows(d)).
std::vector<double> gram_features(const RowVector& activation, int order);

}  // namespace score

// AUROC of id_val scores (positives) against ood_val scores, the tuning objective.
double tuning_auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);

}  // namespace noisyood::detect
