#include <cmath>

#include "detector_impl.hpp"

namespace noisyood::detect {

namespace {

std::vector<double> per_row(const Matrix& z, const std::function<double(const RowVector&)>& f) {
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) out[static_cast<std::size_t>(i)] = f(z.row(i));
  return out;
}

// Stateless or scalar-parameter methods on logits alone.
class LogitDetector : public Detector {
 public:
  LogitDetector(std::string method, json params, std::function<double(const RowVector&, const json&)> formula)
      : method_(std::move(method)), params_(std::move(params)), formula_(std::move(formula)) {}

  std::string method() const override { return method_; }
  void fit(const FitContext&) override {}
  std::vector<double> score(const FeatureSet& data) const override {
    return per_row(data.logits, [&](const RowVector& z) { return formula_(z, params_); });
  }
  json params() const override { return params_; }
  void save_tensors(TensorBundle&) const override {}
  void load_tensors(const TensorBundle&) override {}

 private:
  std::string method_;
  json params_;
  std::function<double(const RowVector&, const json&)> formula_;
};

double mean_nll(const Matrix& logits, std::span<const int32_t> labels, double temperature) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const RowVector z = logits.row(i);
    total += numerics::logsumexp(z, temperature) / temperature - z[labels[static_cast<std::size_t>(i)]] / temperature;
  }
  return total / static_cast<double>(logits.rows());
}

class TempScaleDetector : public Detector {
 public:
  explicit TempScaleDetector(const json& o) : temperature_(param_or(o, "temperature", 1.0)), pinned_(pinned(o, "temperature")) {}

  std::string method() const override { return "tempscale"; }

  void fit(const FitContext& ctx) override {
    if (pinned_) return;
    const FeatureSet& val = ctx.val();
    if (!val.labels) throw MissingInputError("tempscale requires clean id_val labels");
    auto nll = [&](double log_t) { return mean_nll(val.logits, *val.labels, std::exp(log_t)); };
    // Golden-section search on log T.
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(0.01);
    double b = std::log(100.0);
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = nll(c);
    double fd = nll(d);
    while (b - a > 1e-4) {
      if (fc < fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - invphi * (b - a);
        fc = nll(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + invphi * (b - a);
        fd = nll(d);
      }
    }
    const double log_t = 0.5 * (a + b);
    fitted_nll_ = nll(log_t);
    const double unit_nll = nll(0.0);
    temperature_ = std::exp(log_t);
    if (unit_nll <= fitted_nll_) {
      temperature_ = 1.0;
      fitted_nll_ = unit_nll;
    }
  }

  std::vector<double> score(const FeatureSet& data) const override {
    return per_row(data.logits, [&](const RowVector& z) { return score::tempscale(z, temperature_); });
  }

  json params() const override {
    json p = {{"temperature", temperature_}};
    if (fitted_nll_) p["val_nll"] = *fitted_nll_;
    return p;
  }
  void save_tensors(TensorBundle&) const override {}
  void load_tensors(const TensorBundle&) override {}

 private:
  double temperature_;
  bool pinned_;
  std::optional<double> fitted_nll_;
};

struct OdinSetting {
  double temperature;
  double magnitude;
};

std::vector<double> odin_scores(const ClassifierModel* model, const FeatureSet& data, OdinSetting s) {
  if (s.magnitude == 0.0) {
    return per_row(data.logits, [&](const RowVector& z) { return score::tempscale(z, s.temperature); });
  }
  if (!model) throw MissingInputError("odin requires model access for input perturbation");
  if (!data.inputs) throw MissingInputError("odin requires raw inputs for split '" + data.name + "'");
  const Matrix& x = *data.inputs;
  Matrix perturbed(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector g = input_gradient_log_msp(*model, x.row(i).transpose(), s.temperature);
    perturbed.row(i) = x.row(i) + s.magnitude * g.transpose().array().sign().matrix();
  }
  return per_row(predict_logits(*model, perturbed),
                 [&](const RowVector& z) { return score::tempscale(z, s.temperature); });
}

class OdinDetector : public Detector {
 public:
  OdinDetector(const json& o, std::string variant) : variant_(std::move(variant)), overrides_(o) {
    setting_.temperature = param_or(o, "temperature", variant_ == "odin_nopert" ? 1000.0 : 1.0);
    setting_.magnitude = param_or(o, "magnitude", variant_ == "odin_nopert" ? 0.0 : 0.0014);
    if (variant_ == "odin_notemp") setting_.temperature = 1.0;
    if (variant_ == "odin_nopert") setting_.magnitude = 0.0;
    if (variant_ == "odin" && !pinned(o, "temperature")) setting_.temperature = 1000.0;
  }

  std::string method() const override { return variant_; }

  void fit(const FitContext& ctx) override {
    const bool fix_t = variant_ == "odin_notemp" || pinned(overrides_, "temperature");
    const bool fix_m = variant_ == "odin_nopert" || pinned(overrides_, "magnitude");
    const bool need_model = !(fix_m && setting_.magnitude == 0.0);
    if (need_model) {
      model_ = ctx.require_model(variant_);
      has_model_ = true;
    }
    if ((fix_t && fix_m) || !param_or(overrides_, "tune", true)) return;
    ctx.require_ood_val(variant_);
    std::vector<OdinSetting> grid;
    for (double m : {0.0, 0.0005, 0.001, 0.0014, 0.002, 0.005}) {
      if (fix_m && m != setting_.magnitude) continue;
      for (double t : {1.0, 10.0, 100.0, 1000.0}) {
        if (fix_t && t != setting_.temperature) continue;
        grid.push_back({t, m});
      }
    }
    if (fix_m && grid.empty()) {
      for (double t : {1.0, 10.0, 100.0, 1000.0}) grid.push_back({t, setting_.magnitude});
    }
    const ClassifierModel* model = has_model_ ? &model_ : nullptr;
    const std::size_t best = select_best<OdinSetting>(
        grid, [&](const OdinSetting& s, const FeatureSet& data) { return odin_scores(model, data, s); }, ctx,
        &tuning_);
    setting_ = grid[best];
  }

  std::vector<double> score(const FeatureSet& data) const override {
    return odin_scores(has_model_ ? &model_ : nullptr, data, setting_);
  }

  json params() const override {
    json p = {{"temperature", setting_.temperature}, {"magnitude", setting_.magnitude}};
    if (has_model_) p["model_spec"] = model_spec_json(model_.spec);
    if (!tuning_.empty()) p["tuning_auroc"] = tuning_;
    return p;
  }

  void save_tensors(TensorBundle& store) const override {
    if (has_model_) put_model(store, "model.", model_);
  }

  void load_tensors(const TensorBundle& store) override {
    if (overrides_.contains("model_spec")) {
      model_ = get_model(store, "model.", overrides_["model_spec"]);
      has_model_ = true;
    }
  }

 private:
  std::string variant_;
  json overrides_;
  OdinSetting setting_{1.0, 0.0};
  ClassifierModel model_;
  bool has_model_ = false;
  std::vector<double> tuning_;
};

class GradNormDetector : public Detector {
 public:
  explicit GradNormDetector(const json& o) : temperature_(param_or(o, "temperature", 1.0)) {}
  std::string method() const override { return "gradnorm"; }
  void fit(const FitContext&) override {}
  std::vector<double> score(const FeatureSet& data) const override {
    std::vector<double> out(static_cast<std::size_t>(data.size()));
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      out[static_cast<std::size_t>(i)] = score::gradnorm(data.features.row(i), data.logits.row(i), temperature_);
    }
    return out;
  }
  json params() const override { return {{"temperature", temperature_}}; }
  void save_tensors(TensorBundle&) const override {}
  void load_tensors(const TensorBundle&) override {}

 private:
  double temperature_;
};

}  // namespace

std::unique_ptr<Detector> make_msp(const json&) {
  return std::make_unique<LogitDetector>("msp", json::object(),
                                         [](const RowVector& z, const json&) { return score::msp(z); });
}

std::unique_ptr<Detector> make_tempscale(const json& o) { return std::make_unique<TempScaleDetector>(o); }

std::unique_ptr<Detector> make_odin(const json& o, const std::string& variant) {
  return std::make_unique<OdinDetector>(o, variant);
}

std::unique_ptr<Detector> make_gen(const json& o) {
  json p = {{"gamma", param_or(o, "gamma", 0.1)}, {"top_m", param_or(o, "top_m", 10)}};
  return std::make_unique<LogitDetector>("gen", p, [](const RowVector& z, const json& q) {
    return score::gen(z, q["gamma"].get<double>(), std::min(q["top_m"].get<int>(), static_cast<int>(z.size())));
  });
}

std::unique_ptr<Detector> make_mls(const json&) {
  return std::make_unique<LogitDetector>("mls", json::object(),
                                         [](const RowVector& z, const json&) { return score::mls(z); });
}

std::unique_ptr<Detector> make_ebo(const json& o) {
  json p = {{"temperature", param_or(o, "temperature", 1.0)}};
  return std::make_unique<LogitDetector>("ebo", p, [](const RowVector& z, const json& q) {
    return score::ebo(z, q["temperature"].get<double>());
  });
}

std::unique_ptr<Detector> make_gradnorm(const json& o) { return std::make_unique<GradNormDetector>(o); }

}  // namespace noisyood::detect
