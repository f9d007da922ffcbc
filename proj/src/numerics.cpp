#include "noisyood/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "noisyood/error.hpp"

namespace noisyood::numerics {

namespace {

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw NumericError("temperature must be positive and finite");
  }
}

void check_finite(std::span<const double> z, const char* what) {
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite input");
  }
}

std::span<const double> as_span(const Eigen::Ref<const RowVector>& z) {
  return {z.data(), static_cast<std::size_t>(z.size())};
}

}  // namespace

Vector softmax(std::span<const double> z, double temperature) {
  check_temperature(temperature);
  if (z.size() < 2) throw NumericError("softmax needs at least two logits");
  check_finite(z, "softmax");
  const double zmax = *std::max_element(z.begin(), z.end());
  Vector p(static_cast<Eigen::Index>(z.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[static_cast<Eigen::Index>(i)] = std::exp((z[i] - zmax) / temperature);
    total += p[static_cast<Eigen::Index>(i)];
  }
  return p / total;
}

Vector softmax(const Eigen::Ref<const RowVector>& z, double temperature) {
  RowVector contiguous = z;
  return softmax(as_span(contiguous), temperature);
}

double logsumexp(std::span<const double> z, double temperature) {
  check_temperature(temperature);
  if (z.empty()) throw NumericError("logsumexp of empty input");
  check_finite(z, "logsumexp");
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp((v - zmax) / temperature);
  return zmax + temperature * std::log(total);
}

double logsumexp(const Eigen::Ref<const RowVector>& z, double temperature) {
  RowVector contiguous = z;
  return logsumexp(as_span(contiguous), temperature);
}

Matrix floored_pseudo_inverse(const Matrix& symmetric) {
  const Eigen::Index d = symmetric.rows();
  const Eigen::MatrixXd dense = symmetric;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const double floor = 1e-10 * symmetric.trace() / static_cast<double>(d);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const Eigen::MatrixXd& vectors = eig.eigenvectors();
  Eigen::VectorXd inverted = Eigen::VectorXd::Zero(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    if (values[k] > floor && values[k] > 0.0) inverted[k] = 1.0 / values[k];
  }
  const Matrix inverse = vectors * inverted.asDiagonal() * vectors.transpose();
  return 0.5 * (inverse + inverse.transpose());
}

GaussianStats fit_gaussian_stats(const Matrix& features, std::span<const int32_t> labels, int num_classes) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw ValidationError("fit_gaussian_stats: label count does not match feature rows");
  }
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(num_classes), 0);
  Matrix means = Matrix::Zero(num_classes, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= num_classes) throw ValidationError("fit_gaussian_stats: label out of range");
    means.row(c) += features.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] < 2) {
      throw ValidationError("fit_gaussian_stats: class " + std::to_string(c) + " has " +
                            std::to_string(counts[static_cast<std::size_t>(c)]) + " samples, need at least 2");
    }
    means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }

  Matrix centered(n, d);
  for (Eigen::Index i = 0; i < n; ++i) centered.row(i) = features.row(i) - means.row(labels[static_cast<std::size_t>(i)]);
  GaussianStats stats;
  stats.means = std::move(means);
  stats.shared_covariance = (centered.transpose() * centered) / static_cast<double>(n);
  // Blocked GEMM can leave the product asymmetric in the last bit.
  stats.shared_covariance = 0.5 * (stats.shared_covariance + stats.shared_covariance.transpose()).eval();
  stats.precision = floored_pseudo_inverse(stats.shared_covariance);

  stats.global_mean = features.colwise().mean().transpose();
  Matrix global_centered = features.rowwise() - stats.global_mean.transpose();
  stats.global_covariance = (global_centered.transpose() * global_centered) / static_cast<double>(n);
  stats.global_covariance = 0.5 * (stats.global_covariance + stats.global_covariance.transpose()).eval();
  stats.global_precision = floored_pseudo_inverse(stats.global_covariance);
  return stats;
}

double mahalanobis_sq(const Eigen::Ref<const Vector>& f, const Eigen::Ref<const Vector>& mean,
                      const Matrix& precision) {
  if (f.size() != mean.size() || precision.rows() != f.size() || precision.cols() != f.size()) {
    throw ValidationError("mahalanobis_sq: dimension mismatch");
  }
  const Vector diff = f - mean;
  return std::max(0.0, diff.dot(precision * diff));
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of empty input");
  if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile p must lie in [0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

SingularTriplet top_singular_triplet(const Matrix& m) {
  if (m.rows() < 1 || m.cols() < 1) throw ValidationError("top_singular_triplet: empty matrix");
  const Eigen::Index s = m.cols();
  const Matrix gram = m.transpose() * m;

  // Deterministic start that is not orthogonal to any coordinate axis.
  Vector v(s);
  for (Eigen::Index j = 0; j < s; ++j) v[j] = 1.0 + 0.1 * static_cast<double>(j) / static_cast<double>(s);
  v.normalize();

  constexpr int kMaxIterations = 1000;
  constexpr double kTolerance = 1e-10;
  // Each step multiplies the iterate by the current operator and then squares
  // the operator, so step k applies (M^T M)^(2^k). Plain power iteration stalls
  // when the top two singular values nearly coincide.
  Matrix op = gram;
  double lambda = v.dot(gram * v);
  bool converged = false;
  for (int it = 0; it < kMaxIterations; ++it) {
    Vector w = op * v;
    const double norm = w.norm();
    if (norm == 0.0) {
      lambda = 0.0;
      converged = true;
      break;
    }
    v = w / norm;
    const double next = v.dot(gram * v);
    const double change = std::abs(next - lambda);
    lambda = next;
    if (change <= kTolerance * std::max(lambda, std::numeric_limits<double>::min())) {
      converged = true;
      break;
    }
    const Matrix squared = op * op;
    const double scale = squared.norm();
    if (scale > 0.0 && std::isfinite(scale)) op = squared / scale;
  }
  if (!converged) {
    throw NumericError("top_singular_triplet: power iteration did not converge in " +
                       std::to_string(kMaxIterations) + " iterations");
  }

  SingularTriplet t;
  Vector mv = m * v;
  t.sigma = mv.norm();
  t.v = v;
  if (t.sigma > 0.0) {
    t.u = mv / t.sigma;
  } else {
    t.u = Vector::Zero(m.rows());
    t.u[0] = 1.0;
  }
  return t;
}

int fold_rows(int d) {
  int r = 1;
  for (int k = 1; static_cast<long>(k) * k <= d; ++k) {
    if (d % k == 0) r = k;
  }
  return r;
}

double WeibullFit::cdf(double x) const {
  if (x <= shift) return 0.0;
  return 1.0 - std::exp(-std::pow((x - shift) / scale, shape));
}

WeibullFit weibull_mle(std::span<const double> samples, int tail_size, double shift) {
  if (tail_size < 1) throw ValidationError("weibull_mle: tail_size must be positive");
  if (samples.size() < static_cast<std::size_t>(tail_size)) {
    throw ValidationError("weibull_mle: fewer samples than tail_size");
  }
  std::vector<double> tail(samples.begin(), samples.end());
  std::sort(tail.begin(), tail.end(), std::greater<>());
  tail.resize(static_cast<std::size_t>(tail_size));
  for (double& x : tail) {
    x -= shift;
    if (!(x > 0.0) || !std::isfinite(x)) throw NumericError("weibull_mle: non-positive tail value after shift");
  }

  WeibullFit fit;
  fit.shift = shift;
  fit.tail_size = tail_size;
  const double tmax = tail.front();
  const double tmin = tail.back();
  if (tmax == tmin) {
    fit.shape = kWeibullShapeCap;
    fit.scale = tmax;
    return fit;
  }

  // Work on x / max(x) so that x^k stays in (0, 1] for large k.
  const double n = static_cast<double>(tail.size());
  std::vector<double> logs(tail.size());
  double mean_log = 0.0;
  for (std::size_t i = 0; i < tail.size(); ++i) {
    logs[i] = std::log(tail[i] / tmax);
    mean_log += logs[i];
  }
  mean_log /= n;

  // g(k) = S1/S0 - 1/k - mean_log is increasing in k; g' = S2/S0 - (S1/S0)^2 + 1/k^2.
  auto eval = [&](double k, double& g, double& dg) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    for (double l : logs) {
      const double w = std::exp(k * l);
      s0 += w;
      s1 += w * l;
      s2 += w * l * l;
    }
    const double r1 = s1 / s0;
    g = r1 - 1.0 / k - mean_log;
    dg = s2 / s0 - r1 * r1 + 1.0 / (k * k);
  };

  double var_log = 0.0;
  for (double l : logs) var_log += (l - mean_log) * (l - mean_log);
  var_log /= n;
  double k = var_log > 0.0 ? 1.2825 / std::sqrt(var_log) : 1.0;

  // Bracket the root, then Newton with bisection fallback.
  double lo = k, hi = k, g = 0.0, dg = 0.0;
  eval(lo, g, dg);
  while (g > 0.0 && lo > 1e-8) {
    lo *= 0.5;
    eval(lo, g, dg);
  }
  eval(hi, g, dg);
  while (g < 0.0 && hi < kWeibullShapeCap) {
    hi *= 2.0;
    eval(hi, g, dg);
  }
  if (g < 0.0) {
    // Tail is nearly constant; the likelihood keeps rising with the shape.
    fit.shape = kWeibullShapeCap;
    fit.scale = tmax;
    return fit;
  }

  constexpr int kMaxIterations = 200;
  constexpr double kTolerance = 1e-9;
  bool converged = false;
  for (int it = 0; it < kMaxIterations; ++it) {
    eval(k, g, dg);
    if (g > 0.0) hi = k; else lo = k;
    double next = k - g / dg;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - k) <= kTolerance * std::max(1.0, k)) {
      k = next;
      converged = true;
      break;
    }
    k = next;
  }
  if (!converged) throw NumericError("weibull_mle: Newton iteration did not converge in 200 iterations");

  double s0 = 0.0;
  for (double l : logs) s0 += std::exp(k * l);
  fit.shape = k;
  fit.scale = tmax * std::pow(s0 / n, 1.0 / k);
  return fit;
}

}  // namespace noisyood::numerics
