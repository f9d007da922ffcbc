#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "detector_impl.hpp"
#include "noisyood/metrics.hpp"

namespace noisyood::detect {

double tuning_auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
  return metrics::auroc(id_scores, ood_scores);
}

namespace score {

namespace {

constexpr double kKlFloor = 1e-12;
constexpr double kGramBoundFloor = 1e-6;

double energy_of(const RowVector& f, const Matrix& weight, const Vector& bias) {
  const Matrix logits = apply_head(Matrix(f), weight, bias);
  return numerics::logsumexp(RowVector(logits.row(0)), 1.0);
}

}  // namespace

double msp(const RowVector& z) { return numerics::softmax(z, 1.0).maxCoeff(); }

double tempscale(const RowVector& z, double temperature) { return numerics::softmax(z, temperature).maxCoeff(); }

double gen(const RowVector& z, double gamma, int top_m) {
  Vector p = numerics::softmax(z, 1.0);
  std::sort(p.data(), p.data() + p.size(), std::greater<>());
  const auto m = std::min<Eigen::Index>(top_m, p.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) total += std::pow(p[i], gamma) * std::pow(1.0 - p[i], gamma);
  return -total;
}

double mls(const RowVector& z) {
  if (!z.allFinite()) throw NumericError("mls: non-finite logits");
  return z.maxCoeff();
}

double ebo(const RowVector& z, double temperature) { return numerics::logsumexp(z, temperature); }

double gradnorm(const RowVector& f, const RowVector& z, double temperature) {
  const Vector p = numerics::softmax(z, temperature);
  const double uniform = 1.0 / static_cast<double>(p.size());
  return (p.array() - uniform).abs().sum() * f.cwiseAbs().sum();
}

double kl_divergence(const Vector& p, const Vector& q) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(std::max(p[i], kKlFloor) / std::max(q[i], kKlFloor));
  }
  return kl;
}

double klm(const RowVector& z, const Matrix& templates, const std::vector<bool>& template_present) {
  const Vector p = numerics::softmax(z, 1.0);
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < templates.rows(); ++k) {
    if (!template_present[static_cast<std::size_t>(k)]) continue;
    best = std::min(best, kl_divergence(p, templates.row(k).transpose()));
  }
  if (!std::isfinite(best)) throw NumericError("klm: no class templates available");
  return -best;
}

double mds(const RowVector& f, const numerics::GaussianStats& stats) {
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < stats.num_classes(); ++c) {
    best = std::min(best, numerics::mahalanobis_sq(f.transpose(), stats.means.row(c).transpose(), stats.precision));
  }
  return -best;
}

double rmds(const RowVector& f, const numerics::GaussianStats& stats) {
  const double background = numerics::mahalanobis_sq(f.transpose(), stats.global_mean, stats.global_precision);
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < stats.num_classes(); ++c) {
    best = std::min(best, numerics::mahalanobis_sq(f.transpose(), stats.means.row(c).transpose(), stats.precision) -
                              background);
  }
  return -best;
}

double she(const RowVector& f, const RowVector& z, const Matrix& class_means) {
  Eigen::Index predicted;
  z.maxCoeff(&predicted);
  return f.dot(class_means.row(predicted));
}

double knn(const RowVector& f, const Matrix& normalized_reference, int k) {
  if (normalized_reference.rows() == 0) throw ValidationError("knn: empty reference set");
  const double norm = f.norm();
  const RowVector q = norm > 0.0 ? RowVector(f / norm) : f;
  std::vector<double> dist(static_cast<std::size_t>(normalized_reference.rows()));
  for (Eigen::Index i = 0; i < normalized_reference.rows(); ++i) {
    dist[static_cast<std::size_t>(i)] = (normalized_reference.row(i) - q).norm();
  }
  const auto kk = static_cast<std::size_t>(std::clamp<Eigen::Index>(k, 1, normalized_reference.rows()));
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk - 1), dist.end());
  return -dist[kk - 1];
}

double react(const RowVector& f, const Matrix& weight, const Vector& bias, double clip) {
  return energy_of(f.cwiseMin(clip), weight, bias);
}

double rankfeat(const RowVector& f, const Matrix& weight, const Vector& bias) {
  const int d = static_cast<int>(f.size());
  const int r = numerics::fold_rows(d);
  const Matrix m = Eigen::Map<const Matrix>(f.data(), r, d / r);
  const auto t = numerics::top_singular_triplet(m);
  const Matrix residual = m - t.sigma * t.u * t.v.transpose();
  const RowVector flat = Eigen::Map<const RowVector>(residual.data(), d);
  return energy_of(flat, weight, bias);
}

RowVector ash_shape(const RowVector& f, double percentile) {
  if (!(percentile >= 0.0 && percentile <= 100.0)) throw ValidationError("ash: percentile must lie in [0, 100]");
  const auto d = static_cast<std::size_t>(f.size());
  const auto prune = static_cast<std::size_t>(std::floor(percentile * static_cast<double>(d) / 100.0));
  if (prune == 0) return f;
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return f[static_cast<Eigen::Index>(a)] < f[static_cast<Eigen::Index>(b)]; });
  RowVector out = f;
  const double before = f.sum();
  for (std::size_t i = 0; i < prune; ++i) out[static_cast<Eigen::Index>(order[i])] = 0.0;
  const double after = out.sum();
  if (after != 0.0) out *= before / after;
  return out;
}

double ash(const RowVector& f, const Matrix& weight, const Vector& bias, double percentile) {
  return energy_of(ash_shape(f, percentile), weight, bias);
}

Matrix dice_mask(const Matrix& weight, const Vector& mean_features, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity <= 100.0)) throw ValidationError("dice: sparsity must lie in [0, 100]");
  const Eigen::Index d = weight.cols();
  const auto keep = static_cast<Eigen::Index>(std::ceil((1.0 - sparsity / 100.0) * static_cast<double>(d)));
  if (keep >= d) return weight;
  Matrix masked = Matrix::Zero(weight.rows(), d);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  for (Eigen::Index c = 0; c < weight.rows(); ++c) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // Largest contributions first; lower column index wins ties.
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return weight(c, a) * mean_features[a] > weight(c, b) * mean_features[b];
    });
    for (Eigen::Index i = 0; i < keep; ++i) masked(c, order[static_cast<std::size_t>(i)]) = weight(c, order[static_cast<std::size_t>(i)]);
  }
  return masked;
}

Vector vim_residual(const RowVector& f, const Vector& center, const Matrix& complement_basis) {
  const Vector centered = f.transpose() - center;
  if (complement_basis.cols() == 0) return Vector::Zero(centered.size());
  return complement_basis * (complement_basis.transpose() * centered);
}

double vim(const RowVector& f, const RowVector& z, const Vector& center, const Matrix& complement_basis, double alpha) {
  return numerics::logsumexp(z, 1.0) - alpha * vim_residual(f, center, complement_basis).norm();
}

double openmax(const RowVector& z, const OpenMaxModel& model) {
  const Vector p = numerics::softmax(z, 1.0);
  const auto c = static_cast<std::size_t>(z.size());
  std::vector<std::size_t> ranked(c);
  std::iota(ranked.begin(), ranked.end(), std::size_t{0});
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    return z[static_cast<Eigen::Index>(a)] > z[static_cast<Eigen::Index>(b)];
  });
  const auto alpha = std::min<std::size_t>(static_cast<std::size_t>(std::max(model.alpha_rank, 1)), c);
  double unknown = 0.0;
  for (std::size_t rank = 0; rank < alpha; ++rank) {
    const std::size_t k = ranked[rank];
    const double weight = static_cast<double>(alpha - rank) / static_cast<double>(alpha);
    double wscore = 1.0;
    if (model.present[k]) {
      const double distance = (z - model.class_means.row(static_cast<Eigen::Index>(k))).norm();
      wscore = model.fits[k].cdf(distance);
    }
    unknown += p[static_cast<Eigen::Index>(k)] * weight * wscore;
  }
  return 1.0 - unknown;
}

double gram_delta(double lo, double hi, double value) {
  if (value < lo) return (lo - value) / std::max(std::abs(lo), kGramBoundFloor);
  if (value > hi) return (value - hi) / std::max(std::abs(hi), kGramBoundFloor);
  return 0.0;
}

std::vector<double> gram_features(const RowVector& activation, int order) {
  const int d = static_cast<int>(activation.size());
  const int r = numerics::fold_rows(d);
  const Matrix a = Eigen::Map<const Matrix>(activation.data(), r, d / r);
  const Matrix powered = a.array().pow(static_cast<double>(order)).matrix();
  const Matrix g = powered * powered.transpose();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(r * (r + 1) / 2));
  const double inv = 1.0 / static_cast<double>(order);
  for (int i = 0; i < r; ++i) {
    for (int j = i; j < r; ++j) {
      const double v = g(i, j);
      out.push_back(std::copysign(std::pow(std::abs(v), inv), v));
    }
  }
  return out;
}

}  // namespace score

}  // namespace noisyood::detect
