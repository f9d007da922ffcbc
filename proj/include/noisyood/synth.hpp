#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "noisyood/tensor.hpp"

namespace noisyood::synth {

// An OOD source: an equal-weight isotropic Gaussian mixture over `means`.
struct OodSource {
  std::string name;
  Matrix means;  // k x d
  std::optional<double> sigma;  // defaults to the ID sigma
};

struct MixtureSpec {
  int dims = 0;
  int classes = 0;
  Matrix means;  // classes x dims
  double sigma = 1.0;
  int n_train = 0;
  int n_val = 0;
  int n_test = 0;
  int n_ood = 0;      // per OOD test source
  int n_ood_val = 0;  // OOD tuning split (0 disables)
  std::vector<OodSource> ood;
  std::optional<OodSource> ood_val;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static MixtureSpec from_json(const nlohmann::json& j);
};

// Parameters of the default hypercube geometry: C = 2^k ID components at
// scale * (+-1, ..., +-1, 0, ..., 0) over the first k coordinates.
struct HypercubeOptions {
  int dims = 16;
  int cube_dims = 3;
  double scale = 1.0;
  double sigma = 0.47;
  int n_train = 2000;
  int n_val = 200;
  int n_test = 1000;
  int n_ood = 500;
  int n_ood_val = 300;
  // Off-cube displacement of OOD sources along directions orthogonal to the cube.
  double ood_shift = 2.0;
  uint64_t seed = 0;
};

MixtureSpec hypercube_mixture(const HypercubeOptions& options);

// The geometry used by the acceptance benchmark.
MixtureSpec default_acceptance_mixture(uint64_t seed = 2024);

// Bayes-optimal accuracy of hypercube_mixture data: Phi(scale / sigma)^k.
double hypercube_bayes_accuracy(double scale, double sigma, int cube_dims);

// Draws train/val/test (keys "feat", "label") and every OOD source
// ("feat" only) deterministically from spec.seed.
SplitSet generate(const MixtureSpec& spec);

}  // namespace noisyood::synth
