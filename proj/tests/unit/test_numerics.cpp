#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/SVD>

#include "noisyood/error.hpp"
#include "noisyood/numerics.hpp"

using namespace noisyood;
namespace nx = noisyood::numerics;

namespace {

Matrix random_matrix(std::mt19937& gen, int r, int c) {
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = normal(gen);
  return m;
}

double spectral_norm(const Matrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(m)};
  return svd.singularValues()(0);
}

}  // namespace

TEST(Softmax, HandValues) {
  const std::vector<double> z0{0, 0, 0};
  const auto p0 = nx::softmax(z0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p0(i), 1.0 / 3.0, 1e-15);
  const std::vector<double> z1{std::log(2.0), 0};
  const auto p1 = nx::softmax(z1);
  EXPECT_NEAR(p1(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p1(1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndNormalisation) {
  std::mt19937 gen(1);
  std::normal_distribution<double> normal(0, 20);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(2 + trial % 9);
    for (auto& v : z) v = normal(gen);
    const double t = 0.1 + (trial % 7);
    const double c = normal(gen) * 50;
    std::vector<double> shifted = z;
    for (auto& v : shifted) v += c;
    const auto p = nx::softmax(z, t);
    const auto q = nx::softmax(shifted, t);
    EXPECT_NEAR(p.sum(), 1.0, 1e-9);
    EXPECT_LE((p - q).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
}

TEST(Softmax, RejectsBadInput) {
  const std::vector<double> one{1.0};
  EXPECT_THROW(nx::softmax(one), Error);
  const std::vector<double> bad{1.0, std::nan("")};
  EXPECT_THROW(nx::softmax(bad), NumericError);
  const std::vector<double> ok{1.0, 2.0};
  EXPECT_THROW(nx::softmax(ok, 0.0), Error);
}

TEST(LogSumExp, HandValues) {
  const std::vector<double> z0{0, 0, 0};
  EXPECT_NEAR(nx::logsumexp(z0), std::log(3.0), 1e-15);
  const std::vector<double> z1{10, 0, 0};
  EXPECT_NEAR(nx::logsumexp(z1), 10.0 + std::log1p(2.0 * std::exp(-10.0)), 1e-13);
  EXPECT_NEAR(nx::logsumexp(z1), 10.0000908, 1e-7);
  const std::vector<double> z2{3, -1, 2.5};
  EXPECT_LE(nx::logsumexp(z2, 1e-6) - 3.0, 1e-4);
}

TEST(LogSumExp, BoundsAndLargeMagnitudes) {
  std::mt19937 gen(2);
  std::normal_distribution<double> normal(0, 300);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(2 + trial % 6);
    for (auto& v : z) v = normal(gen) + 1e4;
    const double t = 0.01 + trial % 5;
    const double m = *std::max_element(z.begin(), z.end());
    const double l = nx::logsumexp(z, t);
    ASSERT_TRUE(std::isfinite(l));
    EXPECT_GE(l, m - 1e-9);
    EXPECT_LE(l, m + t * std::log(static_cast<double>(z.size())) + 1e-9);
  }
}

TEST(GaussianStats, HandExampleFourPoints) {
  Matrix f(4, 2);
  f << 0, 0, 2, 2, 0, 2, 2, 0;
  const std::vector<int32_t> y{0, 0, 1, 1};
  const auto s = nx::fit_gaussian_stats(f, y, 2);
  EXPECT_NEAR(s.means(0, 0), 1, 1e-15);
  EXPECT_NEAR(s.means(0, 1), 1, 1e-15);
  EXPECT_NEAR(s.means(1, 0), 1, 1e-15);
  EXPECT_NEAR(s.means(1, 1), 1, 1e-15);
  EXPECT_NEAR(s.shared_covariance(0, 0), 1, 1e-15);
  EXPECT_NEAR(s.shared_covariance(1, 1), 1, 1e-15);
  EXPECT_NEAR(s.shared_covariance(0, 1), 0, 1e-15);
  EXPECT_NEAR(s.precision(0, 0), 1, 1e-12);
  EXPECT_NEAR(s.precision(0, 1), 0, 1e-12);
}

TEST(GaussianStats, RepeatedPointsGiveZeroPrecision) {
  Matrix f(4, 2);
  f << 1, 1, 1, 1, 3, -1, 3, -1;
  const std::vector<int32_t> y{0, 0, 1, 1};
  const auto s = nx::fit_gaussian_stats(f, y, 2);
  EXPECT_EQ(s.shared_covariance.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.precision.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GaussianStats, MatchesBruteForceOracle) {
  std::mt19937 gen(3);
  const int n = 300, d = 5, c = 4;
  Matrix f = random_matrix(gen, n, d);
  std::vector<int32_t> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % c;
  const auto s = nx::fit_gaussian_stats(f, y, c);

  Matrix means = Matrix::Zero(c, d);
  std::vector<int> counts(c, 0);
  for (int i = 0; i < n; ++i) {
    means.row(y[i]) += f.row(i);
    counts[y[i]]++;
  }
  for (int k = 0; k < c; ++k) means.row(k) /= counts[k];
  Matrix cov = Matrix::Zero(d, d);
  for (int i = 0; i < n; ++i) {
    const Eigen::RowVectorXd r = f.row(i) - means.row(y[i]);
    cov += r.transpose() * r;
  }
  cov /= n;
  EXPECT_LE((s.means - means).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((s.shared_covariance - cov).cwiseAbs().maxCoeff(), 1e-9);
  const Matrix inv = cov.inverse();
  EXPECT_LE((s.precision - inv).cwiseAbs().maxCoeff(), 1e-8);

  const Eigen::RowVectorXd gm = f.colwise().mean();
  Matrix gcov = Matrix::Zero(d, d);
  for (int i = 0; i < n; ++i) {
    const Eigen::RowVectorXd r = f.row(i) - gm;
    gcov += r.transpose() * r;
  }
  gcov /= n;
  EXPECT_LE((s.global_mean.transpose() - gm).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((s.global_covariance - gcov).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GaussianStats, PrecisionTimesCovarianceIsProjector) {
  std::mt19937 gen(4);
  // Rank-deficient features: 6 dims spanned by 3 directions.
  Matrix f = random_matrix(gen, 200, 3) * random_matrix(gen, 3, 6);
  std::vector<int32_t> y(200);
  for (int i = 0; i < 200; ++i) y[i] = i % 2;
  const auto s = nx::fit_gaussian_stats(f, y, 2);
  const Matrix p = s.precision * s.shared_covariance;
  EXPECT_LE((p * p - p).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(p.trace(), 3.0, 1e-6);
  EXPECT_LE((s.shared_covariance - s.shared_covariance.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GaussianStats, ClassWithTooFewSamplesIsNamed) {
  Matrix f(3, 1);
  f << 1, 2, 3;
  const std::vector<int32_t> y{0, 0, 1};
  try {
    nx::fit_gaussian_stats(f, y, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
}

TEST(Mahalanobis, HandValuesAndInverseOracle) {
  Vector f(2), m(2);
  f << 3, 4;
  m << 0, 0;
  EXPECT_DOUBLE_EQ(nx::mahalanobis_sq(f, m, Matrix::Identity(2, 2)), 25.0);
  EXPECT_DOUBLE_EQ(nx::mahalanobis_sq(f, f, Matrix::Identity(2, 2)), 0.0);

  std::mt19937 gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + trial % 6;
    Matrix a = random_matrix(gen, d + 3, d);
    const Matrix cov = a.transpose() * a / (d + 3) + 0.1 * Matrix::Identity(d, d);
    const Matrix inv = cov.inverse();
    const Vector x = random_matrix(gen, d, 1).col(0);
    const Vector mu = random_matrix(gen, d, 1).col(0);
    const double oracle = (x - mu).dot(inv * (x - mu));
    const double got = nx::mahalanobis_sq(x, mu, nx::floored_pseudo_inverse(cov));
    EXPECT_NEAR(got, oracle, 1e-8 * std::max(1.0, oracle));
    EXPECT_GE(got, 0.0);
  }
  Vector short_v(1);
  short_v << 1;
  EXPECT_THROW(nx::mahalanobis_sq(short_v, m, Matrix::Identity(2, 2)), Error);
}

TEST(Percentile, HandValuesAndSortOracle) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_DOUBLE_EQ(nx::percentile(a, 50), 2.0);
  const std::vector<double> b{4, 1, 3, 2};
  EXPECT_DOUBLE_EQ(nx::percentile(b, 100), 4.0);
  EXPECT_DOUBLE_EQ(nx::percentile(b, 0), 1.0);
  EXPECT_THROW(nx::percentile(std::vector<double>{}, 50), Error);

  std::mt19937 gen(6);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial % 37);
    for (auto& x : v) x = u(gen);
    const double p = u(gen) * 10 + 50;
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    const double h = (s.size() - 1) * p / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, s.size() - 1);
    const double oracle = s[lo] + (h - lo) * (s[hi] - s[lo]);
    EXPECT_NEAR(nx::percentile(v, p), oracle, 1e-12);
  }
}

TEST(TopSingularTriplet, RankOneAndIdentity) {
  Vector a(3), b(4);
  a << 1, -2, 2;
  b << 0.5, 0.5, 0.5, 0.5;
  const Matrix m = a * b.transpose();
  const auto t = nx::top_singular_triplet(m);
  EXPECT_NEAR(t.sigma, a.norm() * b.norm(), 1e-10);
  EXPECT_NEAR(t.sigma, m.norm(), 1e-10);
  EXPECT_NEAR(t.u.norm(), 1.0, 1e-12);
  EXPECT_NEAR(t.v.norm(), 1.0, 1e-12);
  const Matrix residual = m - t.sigma * t.u * t.v.transpose();
  EXPECT_LE(residual.cwiseAbs().maxCoeff(), 1e-8);

  const auto id = nx::top_singular_triplet(Matrix::Identity(2, 2));
  EXPECT_NEAR(id.sigma, 1.0, 1e-12);
}

TEST(TopSingularTriplet, ResidualMatchesSecondSingularValueOfFullSvd) {
  std::mt19937 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = random_matrix(gen, 5, 7);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(m)};
    const auto t = nx::top_singular_triplet(m);
    EXPECT_NEAR(t.sigma, svd.singularValues()(0), 1e-8);
    const Matrix residual = m - t.sigma * t.u * t.v.transpose();
    EXPECT_NEAR(spectral_norm(residual), svd.singularValues()(1), 1e-6);
    EXPECT_LT(spectral_norm(residual), spectral_norm(m));
  }
}

TEST(TopSingularTriplet, NearlyDegenerateSpectrumConverges) {
  // sigma2 / sigma1 = 0.999
  std::mt19937 gen(8);
  Eigen::HouseholderQR<Eigen::MatrixXd> qu{Eigen::MatrixXd(random_matrix(gen, 30, 30))};
  Eigen::HouseholderQR<Eigen::MatrixXd> qv{Eigen::MatrixXd(random_matrix(gen, 20, 20))};
  const Eigen::MatrixXd u = qu.householderQ();
  const Eigen::MatrixXd v = qv.householderQ();
  Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(20, 0.5, 0.01);
  s(0) = 1.0;
  s(1) = 0.999;
  const Matrix m = u.leftCols(20) * s.asDiagonal() * v.transpose();
  const auto t = nx::top_singular_triplet(m);
  EXPECT_NEAR(t.sigma, 1.0, 1e-8);
}

TEST(FoldRows, LargestDivisorBelowSqrt) {
  EXPECT_EQ(nx::fold_rows(64), 8);
  EXPECT_EQ(nx::fold_rows(12), 3);
  EXPECT_EQ(nx::fold_rows(7), 1);
  EXPECT_EQ(nx::fold_rows(1), 1);
}

TEST(Weibull, ConstantTailSaturates) {
  const std::vector<double> v(30, 2.5);
  const auto fit = nx::weibull_mle(v, 20);
  EXPECT_EQ(fit.shape, nx::kWeibullShapeCap);
  EXPECT_EQ(fit.scale, 2.5);
  EXPECT_EQ(fit.tail_size, 20);
}

TEST(Weibull, RecoversShapeTwoFromGeneratedSamples) {
  std::mt19937_64 gen(9);
  std::weibull_distribution<double> dist(2.0, 1.0);
  std::vector<double> samples(10000);
  for (auto& x : samples) x = dist(gen);
  const auto fit = nx::weibull_mle(samples, 10000);
  EXPECT_GE(fit.shape, 1.9);
  EXPECT_LE(fit.shape, 2.1);
  EXPECT_NEAR(fit.shape, 2.0, 0.1);
  EXPECT_NEAR(fit.scale, 1.0, 0.05);
  EXPECT_EQ(fit.shift, 0.0);
}

TEST(Weibull, RecoversOtherParametersWithinFivePercent) {
  std::mt19937_64 gen(10);
  for (auto [k, lambda] : {std::pair{0.8, 3.0}, std::pair{3.5, 0.2}, std::pair{1.5, 10.0}}) {
    std::weibull_distribution<double> dist(k, lambda);
    std::vector<double> samples(10000);
    for (auto& x : samples) x = dist(gen);
    const auto fit = nx::weibull_mle(samples, 10000);
    EXPECT_NEAR(fit.shape / k, 1.0, 0.05);
    EXPECT_NEAR(fit.scale / lambda, 1.0, 0.05);
  }
}

TEST(Weibull, ProfileEquationHoldsAtSolution) {
  std::mt19937_64 gen(11);
  std::weibull_distribution<double> dist(1.7, 2.0);
  std::vector<double> samples(500);
  for (auto& x : samples) x = dist(gen);
  const auto fit = nx::weibull_mle(samples, 50);
  std::vector<double> tail = samples;
  std::sort(tail.begin(), tail.end());
  tail.erase(tail.begin(), tail.end() - 50);
  double a = 0, b = 0, c = 0;
  for (double x : tail) {
    a += std::pow(x, fit.shape) * std::log(x);
    b += std::pow(x, fit.shape);
    c += std::log(x);
  }
  EXPECT_NEAR(a / b - 1.0 / fit.shape - c / 50, 0.0, 1e-7);
  EXPECT_NEAR(fit.scale, std::pow(b / 50, 1.0 / fit.shape), 1e-9 * fit.scale);
}

TEST(Weibull, CdfProperties) {
  for (auto [k, s] : {std::pair{0.5, 1.0}, std::pair{2.0, 3.0}, std::pair{40.0, 0.1}}) {
    nx::WeibullFit fit;
    fit.shape = k;
    fit.scale = s;
    EXPECT_NEAR(fit.cdf(s), 1.0 - std::exp(-1.0), 1e-12);
    double prev = 0.0;
    for (double x = -1.0; x < 10.0; x += 0.05) {
      const double c = fit.cdf(x);
      EXPECT_GE(c, prev);
      EXPECT_LE(c, 1.0);
      prev = c;
    }
  }
}

TEST(Weibull, RejectsBadInput) {
  const std::vector<double> v{1.0, 2.0, -1.0, 3.0};
  EXPECT_THROW(nx::weibull_mle(v, 10), Error);
  EXPECT_THROW(nx::weibull_mle(v, 4), Error);
  EXPECT_NO_THROW(nx::weibull_mle(v, 2));
}
