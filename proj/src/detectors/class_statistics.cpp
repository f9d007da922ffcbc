#include <algorithm>
#include <cmath>
#include <limits>

#include "detector_impl.hpp"

namespace noisyood::detect {

namespace {

int class_count(const FitContext& ctx) { return ctx.train().num_classes(); }

std::vector<double> per_sample(Eigen::Index n, const std::function<double(Eigen::Index)>& f) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = f(i);
  return out;
}

std::vector<bool> correct_mask(const FeatureSet& set) {
  const Labels predicted = set.predictions();
  std::vector<bool> mask(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) mask[i] = predicted[i] == (*set.labels)[i];
  return mask;
}

class MdsDetector : public Detector {
 public:
  explicit MdsDetector(bool relative) : relative_(relative) {}

  std::string method() const override { return relative_ ? "rmds" : "mds"; }
  bool uses_class_labels() const override { return true; }

  void fit(const FitContext& ctx) override {
    const FeatureSet& set = ctx.label_fit_set();
    stats_ = numerics::fit_gaussian_stats(set.features, *set.labels, class_count(ctx));
  }

  std::vector<double> score(const FeatureSet& data) const override {
    return per_sample(data.size(), [&](Eigen::Index i) {
      return relative_ ? score::rmds(data.features.row(i), stats_) : score::mds(data.features.row(i), stats_);
    });
  }

  json params() const override { return {{"classes", stats_.num_classes()}, {"dim", stats_.dim()}}; }
  void save_tensors(TensorBundle& store) const override { put_gaussian(store, "", stats_); }
  void load_tensors(const TensorBundle& store) override { stats_ = get_gaussian(store, ""); }

 private:
  bool relative_;
  numerics::GaussianStats stats_;
};

// L2-regularised logistic regression by Newton (IRLS) on standardised
// columns; returns the coefficients on the original scale, no intercept.
Vector logistic_weights(const Matrix& x, const std::vector<double>& y, double ridge) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = x.cols();
  const Vector mean = x.colwise().mean().transpose();
  Vector scale(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double sd = std::sqrt((x.col(j).array() - mean[j]).square().mean());
    scale[j] = sd > 0.0 ? sd : 1.0;
  }
  Matrix design(n, k + 1);
  design.col(0).setOnes();
  for (Eigen::Index j = 0; j < k; ++j) design.col(j + 1) = (x.col(j).array() - mean[j]) / scale[j];
  Vector target(n);
  for (Eigen::Index i = 0; i < n; ++i) target[i] = y[static_cast<std::size_t>(i)];

  Vector beta = Vector::Zero(k + 1);
  Matrix penalty = ridge * Matrix::Identity(k + 1, k + 1);
  penalty(0, 0) = 0.0;
  for (int it = 0; it < 100; ++it) {
    const Vector eta = design * beta;
    const Vector p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    const Vector w = (p.array() * (1.0 - p.array())).max(1e-12).matrix();
    const Vector gradient = design.transpose() * (target - p) - penalty * beta;
    const Matrix hessian = design.transpose() * w.asDiagonal() * design + penalty;
    const Vector step = hessian.ldlt().solve(gradient);
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  if (!beta.allFinite()) throw NumericError("mdsens: logistic regression diverged");
  Vector weights(k);
  for (Eigen::Index j = 0; j < k; ++j) weights[j] = beta[j + 1] / scale[j];
  return weights;
}

class MdsEnsembleDetector : public Detector {
 public:
  explicit MdsEnsembleDetector(const json& o) : overrides_(o) {
    if (pinned(o, "weights")) weights_ = o["weights"].get<std::vector<double>>();
    ridge_ = param_or(o, "ridge", 1e-3);
  }

  std::string method() const override { return "mdsens"; }
  bool uses_class_labels() const override { return true; }

  void fit(const FitContext& ctx) override {
    const FeatureSet& set = ctx.label_fit_set();
    const auto layers = set.layer_views();
    stats_.clear();
    for (const Matrix* layer : layers) {
      stats_.push_back(numerics::fit_gaussian_stats(*layer, *set.labels, class_count(ctx)));
    }
    if (pinned(overrides_, "weights")) {
      if (weights_.size() != stats_.size()) {
        throw ConfigError("mdsens: " + std::to_string(weights_.size()) + " weights given for " +
                          std::to_string(stats_.size()) + " layers");
      }
      return;
    }
    const FeatureSet& ood = ctx.require_ood_val("mdsens");
    const Matrix id_layers = layer_scores(ctx.val());
    const Matrix ood_layers = layer_scores(ood);
    Matrix x(id_layers.rows() + ood_layers.rows(), id_layers.cols());
    x << id_layers, ood_layers;
    std::vector<double> y(static_cast<std::size_t>(x.rows()), 0.0);
    std::fill(y.begin(), y.begin() + id_layers.rows(), 1.0);
    const Vector w = logistic_weights(x, y, ridge_);
    weights_.assign(w.data(), w.data() + w.size());
  }

  std::vector<double> score(const FeatureSet& data) const override {
    const Matrix per_layer = layer_scores(data);
    return per_sample(data.size(), [&](Eigen::Index i) {
      double total = 0.0;
      for (Eigen::Index l = 0; l < per_layer.cols(); ++l) total += weights_[static_cast<std::size_t>(l)] * per_layer(i, l);
      return total;
    });
  }

  json params() const override { return {{"weights", weights_}, {"ridge", ridge_}, {"layers", stats_.size()}}; }

  void save_tensors(TensorBundle& store) const override {
    for (std::size_t l = 0; l < stats_.size(); ++l) put_gaussian(store, "layer." + std::to_string(l) + ".", stats_[l]);
  }
  void load_tensors(const TensorBundle& store) override {
    stats_.clear();
    for (std::size_t l = 0; l < weights_.size(); ++l) stats_.push_back(get_gaussian(store, "layer." + std::to_string(l) + "."));
  }

 private:
  Matrix layer_scores(const FeatureSet& data) const {
    const auto layers = data.layer_views();
    if (layers.size() != stats_.size()) {
      throw ValidationError("mdsens: split '" + data.name + "' has " + std::to_string(layers.size()) +
                            " layers, fitted on " + std::to_string(stats_.size()));
    }
    Matrix out(data.size(), static_cast<Eigen::Index>(layers.size()));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (Eigen::Index i = 0; i < data.size(); ++i) {
        out(i, static_cast<Eigen::Index>(l)) = score::mds(layers[l]->row(i), stats_[l]);
      }
    }
    return out;
  }

  json overrides_;
  double ridge_;
  std::vector<double> weights_;
  std::vector<numerics::GaussianStats> stats_;
};

// Templates come from the training split grouped by predicted class, so they
// do not depend on the label source.
class KlmDetector : public Detector {
 public:
  std::string method() const override { return "klm"; }

  void fit(const FitContext& ctx) override {
    const FeatureSet& train = ctx.train();
    Matrix probs(train.size(), train.num_classes());
    for (Eigen::Index i = 0; i < train.size(); ++i) probs.row(i) = numerics::softmax(RowVector(train.logits.row(i))).transpose();
    const Labels predicted = train.predictions();
    templates_ = class_means(probs, predicted, train.num_classes(), nullptr, &present_);
  }

  std::vector<double> score(const FeatureSet& data) const override {
    return per_sample(data.size(), [&](Eigen::Index i) { return score::klm(data.logits.row(i), templates_, present_); });
  }

  json params() const override { return {{"classes", templates_.rows()}, {"epsilon", 1e-12}}; }
  void save_tensors(TensorBundle& store) const override {
    put_matrix(store, "templates", templates_);
    put_mask(store, "present", present_);
  }
  void load_tensors(const TensorBundle& store) override {
    templates_ = get_matrix(store, "templates");
    present_ = get_mask(store, "present");
  }

 private:
  Matrix templates_;
  std::vector<bool> present_;
};

class OpenMaxDetector : public Detector {
 public:
  explicit OpenMaxDetector(const json& o)
      : tail_size_(param_or(o, "tail_size", 20)), alpha_(param_or(o, "alpha_rank", 10)) {}

  std::string method() const override { return "openmax"; }
  bool uses_class_labels() const override { return true; }

  void fit(const FitContext& ctx) override {
    const FeatureSet& set = ctx.label_fit_set();
    const int classes = set.num_classes();
    const std::vector<bool> correct = correct_mask(set);
    model_.alpha_rank = std::min(alpha_, classes);
    model_.class_means = class_means(set.logits, *set.labels, classes, &correct, &model_.present);
    model_.fits.assign(static_cast<std::size_t>(classes), numerics::WeibullFit{});
    for (int c = 0; c < classes; ++c) {
      if (!model_.present[static_cast<std::size_t>(c)]) continue;
      std::vector<double> distances;
      for (Eigen::Index i = 0; i < set.size(); ++i) {
        if (!correct[static_cast<std::size_t>(i)] || (*set.labels)[static_cast<std::size_t>(i)] != c) continue;
        distances.push_back((set.logits.row(i) - model_.class_means.row(c)).norm());
      }
      const double largest = *std::max_element(distances.begin(), distances.end());
      if (distances.size() < 2 || largest <= 0.0) {
        // Too few distinct samples for a tail fit; treated like an absent class.
        model_.present[static_cast<std::size_t>(c)] = false;
        continue;
      }
      // The tail may not reach below a zero distance.
      std::sort(distances.begin(), distances.end(), std::greater<>());
      std::size_t tail = std::min<std::size_t>(static_cast<std::size_t>(tail_size_), distances.size());
      while (tail > 1 && distances[tail - 1] <= 0.0) --tail;
      model_.fits[static_cast<std::size_t>(c)] = numerics::weibull_mle(distances, static_cast<int>(tail));
    }
  }

  std::vector<double> score(const FeatureSet& data) const override {
    return per_sample(data.size(), [&](Eigen::Index i) { return score::openmax(data.logits.row(i), model_); });
  }

  json params() const override {
    json fits = json::array();
    for (const auto& f : model_.fits) fits.push_back({{"shape", f.shape}, {"scale", f.scale}, {"tail_size", f.tail_size}});
    const int alpha = model_.class_means.rows() > 0 ? model_.alpha_rank : alpha_;
    return {{"tail_size", tail_size_}, {"alpha_rank", alpha}, {"weibull", fits}};
  }

  void save_tensors(TensorBundle& store) const override {
    put_matrix(store, "class_means", model_.class_means);
    put_mask(store, "present", model_.present);
  }

  void load_tensors(const TensorBundle& store) override {
    model_.class_means = get_matrix(store, "class_means");
    model_.present = get_mask(store, "present");
    model_.alpha_rank = std::min(alpha_, static_cast<int>(model_.class_means.rows()));
    model_.fits.clear();
    for (const auto& f : loaded_fits_) model_.fits.push_back(f);
    model_.fits.resize(static_cast<std::size_t>(model_.class_means.rows()));
  }

  void set_loaded_fits(const json& fits) {
    for (const auto& f : fits) {
      numerics::WeibullFit w;
      w.shape = f.at("shape").get<double>();
      w.scale = f.at("scale").get<double>();
      w.tail_size = f.at("tail_size").get<int>();
      loaded_fits_.push_back(w);
    }
  }

 private:
  int tail_size_;
  int alpha_;
  score::OpenMaxModel model_;
  std::vector<numerics::WeibullFit> loaded_fits_;
};

class SheDetector : public Detector {
 public:
  std::string method() const override { return "she"; }
  bool uses_class_labels() const override { return true; }

  void fit(const FitContext& ctx) override {
    const FeatureSet& set = ctx.label_fit_set();
    const std::vector<bool> correct = correct_mask(set);
    means_ = class_means(set.features, *set.labels, set.num_classes(), &correct, &present_);
  }

  std::vector<double> score(const FeatureSet& data) const override {
    return per_sample(data.size(), [&](Eigen::Index i) { return score::she(data.features.row(i), data.logits.row(i), means_); });
  }

  json params() const override {
    int absent = 0;
    for (bool p : present_) absent += p ? 0 : 1;
    return {{"classes", means_.rows()}, {"classes_without_correct_samples", absent}};
  }
  void save_tensors(TensorBundle& store) const override {
    put_matrix(store, "class_means", means_);
    put_mask(store, "present", present_);
  }
  void load_tensors(const TensorBundle& store) override {
    means_ = get_matrix(store, "class_means");
    present_ = get_mask(store, "present");
  }

 private:
  Matrix means_;
  std::vector<bool> present_;
};

constexpr int kGramOrders = 5;

class GramDetector : public Detector {
 public:
  explicit GramDetector(const json& o) : orders_(param_or(o, "orders", kGramOrders)) {}

  std::string method() const override { return "gram"; }
  bool uses_class_labels() const override { return true; }

  void fit(const FitContext& ctx) override {
    const FeatureSet& set = ctx.label_fit_set();
    const int classes = set.num_classes();
    const auto layers = set.layer_views();
    lower_.clear();
    upper_.clear();
    present_.assign(static_cast<std::size_t>(classes), false);
    for (int32_t y : *set.labels) present_[static_cast<std::size_t>(y)] = true;
    for (const Matrix* layer : layers) {
      const Matrix g = gram_matrix(*layer);
      // Rows 0..C-1 hold per-class bounds, row C the bounds over all classes.
      Matrix lo = Matrix::Constant(classes + 1, g.cols(), std::numeric_limits<double>::infinity());
      Matrix hi = Matrix::Constant(classes + 1, g.cols(), -std::numeric_limits<double>::infinity());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const int c = (*set.labels)[static_cast<std::size_t>(i)];
        for (int r : {c, classes}) {
          lo.row(r) = lo.row(r).cwiseMin(g.row(i));
          hi.row(r) = hi.row(r).cwiseMax(g.row(i));
        }
      }
      for (int c = 0; c < classes; ++c) {
        if (present_[static_cast<std::size_t>(c)]) continue;
        lo.row(c) = lo.row(classes);
        hi.row(c) = hi.row(classes);
      }
      lower_.push_back(std::move(lo));
      upper_.push_back(std::move(hi));
    }
    normalizers_ = Vector::Ones(static_cast<Eigen::Index>(layers.size()));
    const Matrix dev = deviations(ctx.val());
    for (Eigen::Index l = 0; l < dev.cols(); ++l) {
      const double e = dev.col(l).mean();
      normalizers_[l] = e > 0.0 ? e : 1.0;
    }
  }

  std::vector<double> score(const FeatureSet& data) const override {
    const Matrix dev = deviations(data);
    return per_sample(data.size(), [&](Eigen::Index i) {
      double total = 0.0;
      for (Eigen::Index l = 0; l < dev.cols(); ++l) total += dev(i, l) / normalizers_[l];
      return -total;
    });
  }

  // Per-sample, per-layer deviation sums against the bounds of the predicted class.
  Matrix deviations(const FeatureSet& data) const {
    const auto layers = data.layer_views();
    if (layers.size() != lower_.size()) {
      throw ValidationError("gram: split '" + data.name + "' has " + std::to_string(layers.size()) +
                            " layers, fitted on " + std::to_string(lower_.size()));
    }
    const Labels predicted = data.predictions();
    Matrix dev = Matrix::Zero(data.size(), static_cast<Eigen::Index>(layers.size()));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Matrix g = gram_matrix(*layers[l]);
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const int c = predicted[static_cast<std::size_t>(i)];
        double total = 0.0;
        for (Eigen::Index k = 0; k < g.cols(); ++k) {
          total += score::gram_delta(lower_[l](c, k), upper_[l](c, k), g(i, k));
        }
        dev(i, static_cast<Eigen::Index>(l)) = total;
      }
    }
    return dev;
  }

  json params() const override {
    return {{"orders", orders_},
            {"layers", lower_.size()},
            {"normalizers", std::vector<double>(normalizers_.data(), normalizers_.data() + normalizers_.size())}};
  }

  void save_tensors(TensorBundle& store) const override {
    for (std::size_t l = 0; l < lower_.size(); ++l) {
      put_matrix(store, "layer." + std::to_string(l) + ".lower", lower_[l]);
      put_matrix(store, "layer." + std::to_string(l) + ".upper", upper_[l]);
    }
    put_vector(store, "normalizers", normalizers_);
    put_mask(store, "present", present_);
  }

  void load_tensors(const TensorBundle& store) override {
    normalizers_ = get_vector(store, "normalizers");
    present_ = get_mask(store, "present");
    lower_.clear();
    upper_.clear();
    for (Eigen::Index l = 0; l < normalizers_.size(); ++l) {
      lower_.push_back(get_matrix(store, "layer." + std::to_string(l) + ".lower"));
      upper_.push_back(get_matrix(store, "layer." + std::to_string(l) + ".upper"));
    }
  }

 private:
  // One row per sample: the Gram features of every order, concatenated.
  Matrix gram_matrix(const Matrix& layer) const {
    Matrix out;
    for (Eigen::Index i = 0; i < layer.rows(); ++i) {
      std::vector<double> row;
      for (int p = 1; p <= orders_; ++p) {
        const auto part = score::gram_features(layer.row(i), p);
        row.insert(row.end(), part.begin(), part.end());
      }
      if (i == 0) out.resize(layer.rows(), static_cast<Eigen::Index>(row.size()));
      out.row(i) = Eigen::Map<const RowVector>(row.data(), static_cast<Eigen::Index>(row.size()));
    }
    return out;
  }

  int orders_;
  std::vector<Matrix> lower_;
  std::vector<Matrix> upper_;
  Vector normalizers_;
  std::vector<bool> present_;
};

}  // namespace

std::unique_ptr<Detector> make_mds(const json&) { return std::make_unique<MdsDetector>(false); }
std::unique_ptr<Detector> make_rmds(const json&) { return std::make_unique<MdsDetector>(true); }
std::unique_ptr<Detector> make_mdsens(const json& o) { return std::make_unique<MdsEnsembleDetector>(o); }
std::unique_ptr<Detector> make_klm(const json&) { return std::make_unique<KlmDetector>(); }

std::unique_ptr<Detector> make_openmax(const json& o) {
  auto detector = std::make_unique<OpenMaxDetector>(o);
  if (o.is_object() && o.contains("weibull")) detector->set_loaded_fits(o["weibull"]);
  return detector;
}

std::unique_ptr<Detector> make_she(const json&) { return std::make_unique<SheDetector>(); }
std::unique_ptr<Detector> make_gram(const json& o) { return std::make_unique<GramDetector>(o); }

}  // namespace noisyood::detect
