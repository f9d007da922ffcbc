#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace noisyood::metrics {

// Mann-Whitney AUROC with positives = `pos`; ties count one half.
// Throws ValidationError if either side is empty.
double auroc(std::span<const double> pos, std::span<const double> neg);

struct AurocTriple {
  double id_vs_ood = 0.0;
  double correct_vs_ood = 0.0;  // meaningful only when n_correct > 0
  std::optional<double> incorrect_vs_ood;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
  std::size_t n_ood = 0;

  bool has_correct() const { return n_correct > 0; }
};

AurocTriple auroc_triple(std::span<const double> id_scores, const std::vector<bool>& id_correct,
                         std::span<const double> ood_scores);

// Median with the even-count rule (mean of the two middle values).
double median(std::vector<double> values);
double aggregate_median(const std::map<std::string, double>& per_ood_set);

// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> fractional_ranks(std::span<const double> values);

// Pearson correlation of fractional ranks. Returns nullopt when either
// argument is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct AsoResult {
  double eps_min = 1.0;
  double violation_ratio = 0.0;
  double alpha = 0.05;
  int n_bootstrap = 0;
  uint64_t seed = 0;

  // "A stochastically dominates B" can be claimed when eps_min < 0.5.
  bool a_better() const { return eps_min < 0.5; }
};

struct AsoOptions {
  double alpha = 0.05;
  int n_bootstrap = 1000;
  uint64_t seed = 0;
  double dt = 0.005;  // quantile grid spacing
};

// Share of the squared quantile-function gap between A and B where A falls
// below B. 0 when A's quantile function dominates everywhere, 1 when B's does.
double violation_ratio(std::span<const double> a, std::span<const double> b, double dt = 0.005);

// Almost-stochastic-order test of "A is better (larger) than B". eps_min is the
// bootstrap-normal upper confidence bound on the violation ratio at level 1 - alpha.
// Requires at least five samples per side.
AsoResult aso(std::span<const double> a, std::span<const double> b, const AsoOptions& options = {});

}  // namespace noisyood::metrics
