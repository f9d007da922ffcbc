#include "noisyood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "noisyood/error.hpp"
#include "noisyood/rng.hpp"

namespace noisyood::metrics {

double auroc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) {
    throw ValidationError("auroc: both the positive and the negative set must be non-empty");
  }
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(pos.size() + neg.size());
  for (double s : pos) items.push_back({s, true});
  for (double s : neg) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // U = sum over positives of (#negatives strictly below + 0.5 * #negatives tied),
  // accumulated in integer half-units so the result is exact.
  uint64_t twice_u = 0;
  uint64_t negatives_below = 0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    uint64_t tied_pos = 0, tied_neg = 0;
    while (j < items.size() && items[j].score == items[i].score) {
      (items[j].positive ? tied_pos : tied_neg)++;
      ++j;
    }
    twice_u += tied_pos * (2 * negatives_below + tied_neg);
    negatives_below += tied_neg;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

AurocTriple auroc_triple(std::span<const double> id_scores, const std::vector<bool>& id_correct,
                         std::span<const double> ood_scores) {
  if (id_correct.size() != id_scores.size()) throw ValidationError("auroc_triple: mask length differs from ID scores");
  if (ood_scores.empty()) throw ValidationError("auroc_triple: empty OOD set");
  std::vector<double> correct, incorrect;
  for (std::size_t i = 0; i < id_scores.size(); ++i) {
    (id_correct[i] ? correct : incorrect).push_back(id_scores[i]);
  }
  AurocTriple t;
  t.n_correct = correct.size();
  t.n_incorrect = incorrect.size();
  t.n_ood = ood_scores.size();
  t.id_vs_ood = auroc(id_scores, ood_scores);
  if (!correct.empty()) t.correct_vs_ood = auroc(correct, ood_scores);
  if (!incorrect.empty()) t.incorrect_vs_ood = auroc(incorrect, ood_scores);
  return t;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double aggregate_median(const std::map<std::string, double>& per_ood_set) {
  std::vector<double> values;
  for (const auto& [name, v] : per_ood_set) values.push_back(v);
  return median(std::move(values));
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman: vectors differ in length");
  if (x.size() < 2) return std::nullopt;
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

// Empirical quantile function F^{-1}(t) = x_(ceil(t n)) on sorted data.
double quantile_of_sorted(const std::vector<double>& sorted, double t) {
  const double n = static_cast<double>(sorted.size());
  auto k = static_cast<std::size_t>(std::ceil(t * n));
  k = std::clamp<std::size_t>(k, 1, sorted.size());
  return sorted[k - 1];
}

double violation_ratio_sorted(const std::vector<double>& a, const std::vector<double>& b, double dt) {
  double violation = 0.0, total = 0.0;
  const auto steps = static_cast<int>(std::lround(1.0 / dt));
  for (int i = 0; i < steps; ++i) {
    const double t = (static_cast<double>(i) + 0.5) * dt;
    const double diff = quantile_of_sorted(a, t) - quantile_of_sorted(b, t);
    const double sq = diff * diff * dt;
    total += sq;
    if (diff < 0.0) violation += sq;
  }
  // Identical quantile functions: no evidence either way.
  return total > 0.0 ? violation / total : 0.5;
}

}  // namespace

double violation_ratio(std::span<const double> a, std::span<const double> b, double dt) {
  if (a.empty() || b.empty()) throw ValidationError("violation_ratio: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  return violation_ratio_sorted(sa, sb, dt);
}

AsoResult aso(std::span<const double> a, std::span<const double> b, const AsoOptions& options) {
  if (a.size() < 5 || b.size() < 5) throw ValidationError("aso: need at least 5 samples on each side");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw ValidationError("aso: alpha must lie in (0, 1)");
  if (options.n_bootstrap < 2) throw ValidationError("aso: need at least 2 bootstrap replicates");

  AsoResult result;
  result.alpha = options.alpha;
  result.n_bootstrap = options.n_bootstrap;
  result.seed = options.seed;
  result.violation_ratio = violation_ratio(a, b, options.dt);

  const double n = static_cast<double>(a.size());
  const double m = static_cast<double>(b.size());
  const double scale = std::sqrt(n * m / (n + m));

  const Philox root = Philox(options.seed).split("aso");
  std::vector<double> replicates(static_cast<std::size_t>(options.n_bootstrap));
  std::vector<double> ra(a.size()), rb(b.size());
  for (int r = 0; r < options.n_bootstrap; ++r) {
    Philox rng = root.split(static_cast<uint64_t>(r));
    for (auto& v : ra) v = a[static_cast<std::size_t>(rng.below(a.size()))];
    for (auto& v : rb) v = b[static_cast<std::size_t>(rng.below(b.size()))];
    std::sort(ra.begin(), ra.end());
    std::sort(rb.begin(), rb.end());
    replicates[static_cast<std::size_t>(r)] = scale * (violation_ratio_sorted(ra, rb, options.dt) - result.violation_ratio);
  }
  const double mean = std::accumulate(replicates.begin(), replicates.end(), 0.0) / options.n_bootstrap;
  double var = 0.0;
  for (double v : replicates) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / options.n_bootstrap);

  const double z_alpha = boost::math::quantile(boost::math::normal(), options.alpha);  // negative
  result.eps_min = std::clamp(result.violation_ratio - sigma * z_alpha / scale, 0.0, 1.0);
  return result;
}

}  // namespace noisyood::metrics
