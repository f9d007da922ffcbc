#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "detector_impl.hpp"

namespace noisyood::detect {

namespace {

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

class KnnDetector : public Detector {
 public:
  explicit KnnDetector(const json& o) : k_(param_or(o, "k", 50)) {
    if (k_ < 1) throw ConfigError("knn: k must be positive");
  }

  std::string method() const override { return "knn"; }

  void fit(const FitContext& ctx) override { reference_ = l2_normalize_rows(ctx.train().features); }

  // Exact full scan; squared distances come from one matrix product.
  std::vector<double> score(const FeatureSet& data) const override {
    if (reference_.rows() == 0) throw ValidationError("knn: empty reference set");
    const Matrix queries = l2_normalize_rows(data.features);
    const Vector ref_sq = reference_.rowwise().squaredNorm();
    const auto kk = static_cast<std::size_t>(std::min<Eigen::Index>(k_, reference_.rows()));
    std::vector<double> out(static_cast<std::size_t>(queries.rows()));
    std::vector<double> dist(static_cast<std::size_t>(reference_.rows()));
    constexpr Eigen::Index kBlock = 512;
    for (Eigen::Index start = 0; start < queries.rows(); start += kBlock) {
      const Eigen::Index rows = std::min(kBlock, queries.rows() - start);
      const Matrix dots = queries.middleRows(start, rows) * reference_.transpose();
      for (Eigen::Index i = 0; i < rows; ++i) {
        const double q_sq = queries.row(start + i).squaredNorm();
        for (Eigen::Index j = 0; j < reference_.rows(); ++j) {
          dist[static_cast<std::size_t>(j)] = std::max(0.0, q_sq + ref_sq[j] - 2.0 * dots(i, j));
        }
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk - 1), dist.end());
        out[static_cast<std::size_t>(start + i)] = -std::sqrt(dist[kk - 1]);
      }
    }
    return out;
  }

  json params() const override {
    return {{"k", k_}, {"effective_k", std::min<Eigen::Index>(k_, reference_.rows())}};
  }
  void save_tensors(TensorBundle& store) const override { put_matrix(store, "reference", reference_); }
  void load_tensors(const TensorBundle& store) override { reference_ = get_matrix(store, "reference"); }

 private:
  int k_;
  Matrix reference_;
};

class VimDetector : public Detector {
 public:
  explicit VimDetector(const json& o) : overrides_(o) {
    if (pinned(o, "dim")) dim_ = o["dim"].get<int>();
    if (pinned(o, "alpha")) alpha_ = o["alpha"].get<double>();
  }

  std::string method() const override { return "vim"; }

  void fit(const FitContext& ctx) override {
    const FeatureSet& train = ctx.train();
    const auto d = static_cast<int>(train.features.cols());
    if (!pinned(overrides_, "dim")) dim_ = d / 2;
    if (dim_ < 0 || dim_ > d) throw ConfigError("vim: principal dimension must lie in [0, d]");
    center_ = train.features.colwise().mean().transpose();
    const Matrix centered = train.features.rowwise() - center_.transpose();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(train.size());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("vim: eigendecomposition failed");
    // Eigenvalues ascend, so the complement is the first d - D eigenvectors.
    complement_ = eig.eigenvectors().leftCols(d - dim_);
    if (!pinned(overrides_, "alpha")) {
      double logit_sum = 0.0;
      double residual_sum = 0.0;
      for (Eigen::Index i = 0; i < train.size(); ++i) {
        logit_sum += train.logits.row(i).maxCoeff();
        residual_sum += score::vim_residual(train.features.row(i), center_, complement_).norm();
      }
      alpha_ = residual_sum > 0.0 ? logit_sum / residual_sum : 0.0;
    }
  }

  std::vector<double> score(const FeatureSet& data) const override {
    std::vector<double> out(static_cast<std::size_t>(data.size()));
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      out[static_cast<std::size_t>(i)] = score::vim(data.features.row(i), data.logits.row(i), center_, complement_, alpha_);
    }
    return out;
  }

  json params() const override { return {{"dim", dim_}, {"alpha", alpha_}}; }
  void save_tensors(TensorBundle& store) const override {
    put_vector(store, "center", center_);
    put_matrix(store, "complement", complement_);
  }
  void load_tensors(const TensorBundle& store) override {
    center_ = get_vector(store, "center");
    complement_ = store.at("complement").numel() == 0 ? Matrix(center_.size(), 0) : get_matrix(store, "complement");
  }

 private:
  json overrides_;
  int dim_ = 0;
  double alpha_ = 0.0;
  Vector center_;
  Matrix complement_;
};

}  // namespace

std::unique_ptr<Detector> make_knn(const json& o) { return std::make_unique<KnnDetector>(o); }
std::unique_ptr<Detector> make_vim(const json& o) { return std::make_unique<VimDetector>(o); }

}  // namespace noisyood::detect
