#include <cmath>
#include <limits>

#include "detector_impl.hpp"

namespace noisyood::detect {

namespace {

std::vector<double> energies(const Matrix& logits) {
  std::vector<double> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = numerics::logsumexp(RowVector(logits.row(i)), 1.0);
  }
  return out;
}

// Base for methods that reshape features or weights and re-apply the head.
class HeadDetector : public Detector {
 public:
  void save_tensors(TensorBundle& store) const override {
    put_matrix(store, "head.W", weight_);
    put_vector(store, "head.b", bias_);
  }
  void load_tensors(const TensorBundle& store) override {
    weight_ = get_matrix(store, "head.W");
    bias_ = get_vector(store, "head.b");
  }

 protected:
  void take_head(const FitContext& ctx) {
    const ClassifierModel& model = ctx.require_model(method());
    weight_ = model.head.weight;
    bias_ = model.head.bias;
  }

  Matrix weight_;
  Vector bias_;
};

class ReactDetector : public HeadDetector {
 public:
  explicit ReactDetector(const json& o) : overrides_(o), percentile_(param_or(o, "percentile", 90.0)) {
    if (pinned(o, "clip")) clip_ = o["clip"].get<double>();
  }

  std::string method() const override { return "react"; }

  void fit(const FitContext& ctx) override {
    take_head(ctx);
    if (pinned(overrides_, "clip")) return;
    const Matrix& f = ctx.train().features;
    std::vector<double> values(f.data(), f.data() + f.size());
    std::sort(values.begin(), values.end());
    auto clip_at = [&](double p) {
      if (p >= 100.0) return std::numeric_limits<double>::infinity();
      return numerics::percentile(values, p);
    };
    if (!pinned(overrides_, "percentile") && tuning_enabled(overrides_, ctx)) {
      const std::vector<double> grid = {85.0, 90.0, 95.0, 99.0};
      const std::size_t best = select_best<double>(
          grid, [&](const double& p, const FeatureSet& data) { return scores_at(data, clip_at(p)); }, ctx, &tuning_);
      percentile_ = grid[best];
    }
    clip_ = clip_at(percentile_);
  }

  std::vector<double> score(const FeatureSet& data) const override { return scores_at(data, clip_); }

  json params() const override {
    json p = {{"percentile", percentile_}};
    // JSON has no infinity; an absent clip means no clipping.
    if (std::isfinite(clip_)) p["clip"] = clip_;
    if (!tuning_.empty()) p["tuning_auroc"] = tuning_;
    return p;
  }

 private:
  std::vector<double> scores_at(const FeatureSet& data, double clip) const {
    return energies(apply_head(data.features.cwiseMin(clip), weight_, bias_));
  }

  json overrides_;
  double percentile_;
  double clip_ = std::numeric_limits<double>::infinity();
  std::vector<double> tuning_;
};

class RankFeatDetector : public HeadDetector {
 public:
  std::string method() const override { return "rankfeat"; }
  void fit(const FitContext& ctx) override { take_head(ctx); }
  std::vector<double> score(const FeatureSet& data) const override {
    std::vector<double> out(static_cast<std::size_t>(data.size()));
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      out[static_cast<std::size_t>(i)] = score::rankfeat(data.features.row(i), weight_, bias_);
    }
    return out;
  }
  json params() const override { return {{"fold_rows", numerics::fold_rows(static_cast<int>(weight_.cols()))}}; }
};

class DiceDetector : public HeadDetector {
 public:
  explicit DiceDetector(const json& o) : overrides_(o), sparsity_(param_or(o, "sparsity", 70.0)) {}

  std::string method() const override { return "dice"; }

  void fit(const FitContext& ctx) override {
    take_head(ctx);
    mean_features_ = ctx.train().features.colwise().mean().transpose();
    if (!pinned(overrides_, "sparsity") && tuning_enabled(overrides_, ctx)) {
      const std::vector<double> grid = {10.0, 30.0, 50.0, 70.0, 90.0};
      const std::size_t best = select_best<double>(
          grid,
          [&](const double& p, const FeatureSet& data) {
            return energies(apply_head(data.features, score::dice_mask(weight_, mean_features_, p), bias_));
          },
          ctx, &tuning_);
      sparsity_ = grid[best];
    }
    masked_ = score::dice_mask(weight_, mean_features_, sparsity_);
  }

  std::vector<double> score(const FeatureSet& data) const override {
    return energies(apply_head(data.features, masked_, bias_));
  }

  json params() const override {
    json p = {{"sparsity", sparsity_}};
    if (!tuning_.empty()) p["tuning_auroc"] = tuning_;
    return p;
  }

  void save_tensors(TensorBundle& store) const override {
    HeadDetector::save_tensors(store);
    put_vector(store, "mean_features", mean_features_);
    put_matrix(store, "masked.W", masked_);
  }
  void load_tensors(const TensorBundle& store) override {
    HeadDetector::load_tensors(store);
    mean_features_ = get_vector(store, "mean_features");
    masked_ = get_matrix(store, "masked.W");
  }

 private:
  json overrides_;
  double sparsity_;
  Vector mean_features_;
  Matrix masked_;
  std::vector<double> tuning_;
};

class AshDetector : public HeadDetector {
 public:
  explicit AshDetector(const json& o) : overrides_(o), percentile_(param_or(o, "percentile", 90.0)) {}

  std::string method() const override { return "ash"; }

  void fit(const FitContext& ctx) override {
    take_head(ctx);
    if (!pinned(overrides_, "percentile") && tuning_enabled(overrides_, ctx)) {
      const std::vector<double> grid = {65.0, 70.0, 75.0, 80.0, 85.0, 90.0, 95.0};
      const std::size_t best = select_best<double>(
          grid, [&](const double& p, const FeatureSet& data) { return scores_at(data, p); }, ctx, &tuning_);
      percentile_ = grid[best];
    }
  }

  std::vector<double> score(const FeatureSet& data) const override { return scores_at(data, percentile_); }

  json params() const override {
    json p = {{"percentile", percentile_}};
    if (!tuning_.empty()) p["tuning_auroc"] = tuning_;
    return p;
  }

 private:
  std::vector<double> scores_at(const FeatureSet& data, double p) const {
    Matrix shaped(data.features.rows(), data.features.cols());
    for (Eigen::Index i = 0; i < data.size(); ++i) shaped.row(i) = score::ash_shape(data.features.row(i), p);
    return energies(apply_head(shaped, weight_, bias_));
  }

  json overrides_;
  double percentile_;
  std::vector<double> tuning_;
};

}  // namespace

std::unique_ptr<Detector> make_react(const json& o) { return std::make_unique<ReactDetector>(o); }
std::unique_ptr<Detector> make_rankfeat(const json&) { return std::make_unique<RankFeatDetector>(); }
std::unique_ptr<Detector> make_dice(const json& o) { return std::make_unique<DiceDetector>(o); }
std::unique_ptr<Detector> make_ash(const json& o) { return std::make_unique<AshDetector>(o); }

}  // namespace noisyood::detect
