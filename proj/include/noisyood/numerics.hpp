#pragma once

#include <span>

#include "noisyood/tensor.hpp"

namespace noisyood::numerics {

// Tempered softmax with max subtraction. Requires at least two entries and
// temperature > 0; throws NumericError on non-finite input.
Vector softmax(std::span<const double> z, double temperature = 1.0);
Vector softmax(const Eigen::Ref<const RowVector>& z, double temperature = 1.0);

// temperature * log(sum(exp(z / temperature))), evaluated stably.
double logsumexp(std::span<const double> z, double temperature = 1.0);
double logsumexp(const Eigen::Ref<const RowVector>& z, double temperature = 1.0);

// Class-conditional Gaussians with a tied covariance, plus a class-agnostic
// background Gaussian fitted on all rows.
struct GaussianStats {
  Matrix means;              // C x d
  Matrix shared_covariance;  // d x d, divisor N
  Matrix precision;          // floored pseudo-inverse of shared_covariance
  Vector global_mean;        // d
  Matrix global_covariance;  // d x d, divisor N
  Matrix global_precision;

  int num_classes() const { return static_cast<int>(means.rows()); }
  int dim() const { return static_cast<int>(means.cols()); }
};

// Every class in [0, num_classes) needs at least two rows.
GaussianStats fit_gaussian_stats(const Matrix& features, std::span<const int32_t> labels, int num_classes);

// Pseudo-inverse through the symmetric eigendecomposition. Eigenvalues at or
// below 1e-10 * trace / d are treated as zero.
Matrix floored_pseudo_inverse(const Matrix& symmetric);

double mahalanobis_sq(const Eigen::Ref<const Vector>& f, const Eigen::Ref<const Vector>& mean,
                      const Matrix& precision);

// Linear interpolation between closest ranks on the sorted values;
// p = 0 gives the minimum and p = 100 the maximum.
double percentile(std::span<const double> values, double p);

struct SingularTriplet {
  double sigma = 0.0;
  Vector u;
  Vector v;
};

// Largest singular value and vectors by power iteration on M^T M (with the
// operator squared after every step). Converged
// when the Rayleigh quotient changes by at most 1e-10 (relative); throws
// NumericError after 1000 iterations.
SingularTriplet top_singular_triplet(const Matrix& m);

// Largest divisor of d that is <= sqrt(d); used to fold feature vectors into
// near-square matrices.
int fold_rows(int d);

struct WeibullFit {
  double shape = 1.0;
  double scale = 1.0;
  double shift = 0.0;
  int tail_size = 0;

  double cdf(double x) const;
};

inline constexpr double kWeibullShapeCap = 1e4;

// Maximum-likelihood Weibull on the largest `tail_size` samples. Shape solves
// the profile-likelihood equation
//   sum(x^k ln x) / sum(x^k) - 1/k - mean(ln x) = 0
// by safeguarded Newton iteration (tol 1e-9, 200 iterations). A constant tail
// saturates at shape = kWeibullShapeCap with scale = the tail value.
WeibullFit weibull_mle(std::span<const double> samples, int tail_size, double shift = 0.0);

}  // namespace noisyood::numerics
