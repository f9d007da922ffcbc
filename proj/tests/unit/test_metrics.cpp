#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "noisyood/error.hpp"
#include "noisyood/metrics.hpp"

using namespace noisyood;
namespace mx = noisyood::metrics;

namespace {

double pairwise_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0.0;
  for (double p : pos)
    for (double q : neg) s += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
  return s / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<double> draw(std::mt19937& gen, int n, double mu, bool coarse) {
  std::normal_distribution<double> normal(mu, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = coarse ? std::round(normal(gen) * 2) / 2 : normal(gen);
  return v;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Ranks by counting: rank = #less + (#equal + 1) / 2.
std::vector<double> count_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

}  // namespace

TEST(Auroc, HandCases) {
  const std::vector<double> pos{3, 4, 5}, neg{0, 1, 2};
  EXPECT_EQ(mx::auroc(pos, neg), 1.0);
  EXPECT_EQ(mx::auroc(neg, pos), 0.0);
  const std::vector<double> same(5, 1.0);
  EXPECT_EQ(mx::auroc(same, same), 0.5);
  EXPECT_THROW(mx::auroc(std::vector<double>{}, neg), ValidationError);
  EXPECT_THROW(mx::auroc(pos, std::vector<double>{}), ValidationError);
}

TEST(Auroc, MatchesPairwiseOracleWithTies) {
  std::mt19937 gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    const bool coarse = trial % 2;
    const auto pos = draw(gen, 1 + trial % 40, 0.5, coarse);
    const auto neg = draw(gen, 1 + (trial * 7) % 53, 0.0, coarse);
    EXPECT_NEAR(mx::auroc(pos, neg), pairwise_auroc(pos, neg), 1e-12);
  }
}

TEST(Auroc, MonotoneInvarianceAndComplement) {
  std::mt19937 gen(2);
  const auto pos = draw(gen, 60, 0.3, false);
  const auto neg = draw(gen, 70, 0.0, false);
  std::vector<double> tp = pos, tn = neg;
  for (auto& v : tp) v = std::exp(3 * v) + 1;
  for (auto& v : tn) v = std::exp(3 * v) + 1;
  EXPECT_NEAR(mx::auroc(pos, neg), mx::auroc(tp, tn), 1e-15);
  EXPECT_NEAR(mx::auroc(pos, neg) + mx::auroc(neg, pos), 1.0, 1e-12);
}

TEST(AurocTriple, AllCorrect) {
  const std::vector<double> id{1, 2, 3}, ood{0, 2.5};
  const auto t = mx::auroc_triple(id, {true, true, true}, ood);
  EXPECT_FALSE(t.incorrect_vs_ood.has_value());
  EXPECT_EQ(t.id_vs_ood, t.correct_vs_ood);
  EXPECT_EQ(t.n_correct, 3u);
  EXPECT_EQ(t.n_incorrect, 0u);
  EXPECT_EQ(t.n_ood, 2u);
}

TEST(AurocTriple, ConstructedSeparation) {
  const std::vector<double> id{10, 11, 12, -10, -11};
  const std::vector<bool> correct{true, true, true, false, false};
  const std::vector<double> ood{0, 1, 2, 3};
  const auto t = mx::auroc_triple(id, correct, ood);
  EXPECT_EQ(t.correct_vs_ood, 1.0);
  ASSERT_TRUE(t.incorrect_vs_ood.has_value());
  EXPECT_EQ(*t.incorrect_vs_ood, 0.0);
  EXPECT_NEAR(t.id_vs_ood, 3.0 / 5.0, 1e-15);
}

TEST(AurocTriple, DecompositionIdentityOnRandomInstances) {
  std::mt19937 gen(3);
  std::bernoulli_distribution coin(0.7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto id = draw(gen, 2 + trial % 50, 0.5, trial % 3 == 0);
    std::vector<bool> correct(id.size());
    for (std::size_t i = 0; i < id.size(); ++i) correct[i] = coin(gen);
    const auto ood = draw(gen, 1 + trial % 29, 0.0, trial % 3 == 0);
    const auto t = mx::auroc_triple(id, correct, ood);
    if (!t.has_correct() || !t.incorrect_vs_ood) continue;
    const double nc = t.n_correct, ni = t.n_incorrect;
    EXPECT_NEAR(t.id_vs_ood, (nc * t.correct_vs_ood + ni * *t.incorrect_vs_ood) / (nc + ni), 1e-9);
  }
}

TEST(AurocTriple, Errors) {
  const std::vector<double> id{1, 2};
  EXPECT_THROW(mx::auroc_triple(id, {true}, std::vector<double>{1}), ValidationError);
  EXPECT_THROW(mx::auroc_triple(id, {true, false}, std::vector<double>{}), ValidationError);
}

TEST(Median, EvenAndOddCounts) {
  EXPECT_DOUBLE_EQ(mx::aggregate_median({{"a", 0.8}}), 0.8);
  EXPECT_DOUBLE_EQ(mx::aggregate_median({{"a", 1.0}, {"b", 0.6}, {"c", 0.8}}), 0.8);
  EXPECT_DOUBLE_EQ(mx::aggregate_median({{"a", 0.6}, {"b", 0.8}}), 0.7);
  EXPECT_THROW(mx::median({}), ValidationError);
}

TEST(Spearman, MonotoneCases) {
  std::vector<double> x{1, 2, 3, 4, 5}, up{2, 4, 8, 16, 32}, down{5, 1, 0, -3, -100};
  EXPECT_NEAR(*mx::spearman(x, up), 1.0, 1e-15);
  EXPECT_NEAR(*mx::spearman(x, down), -1.0, 1e-15);
  const std::vector<double> flat(5, 1.0);
  EXPECT_FALSE(mx::spearman(x, flat).has_value());
}

TEST(Spearman, MatchesRankThenPearsonOracle) {
  std::mt19937 gen(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = draw(gen, 3 + trial % 30, 0, trial % 2);
    const auto y = draw(gen, 3 + trial % 30, 0, trial % 3 == 0);
    const auto rx = count_ranks(x), ry = count_ranks(y);
    EXPECT_EQ(mx::fractional_ranks(x), rx);
    const auto got = mx::spearman(x, y);
    const bool constant = *std::min_element(rx.begin(), rx.end()) == *std::max_element(rx.begin(), rx.end()) ||
                          *std::min_element(ry.begin(), ry.end()) == *std::max_element(ry.begin(), ry.end());
    if (constant) {
      EXPECT_FALSE(got.has_value());
      continue;
    }
    ASSERT_TRUE(got.has_value());
    EXPECT_NEAR(*got, pearson(rx, ry), 1e-12);
    std::vector<double> tx = x;
    for (auto& v : tx) v = v * v * v - 7;
    EXPECT_NEAR(*mx::spearman(tx, y), *got, 1e-12);
  }
}

TEST(Aso, ViolationRatioExtremes) {
  std::mt19937 gen(5);
  const auto a = draw(gen, 40, 0, false);
  std::vector<double> b = a;
  for (auto& v : b) v -= 1.0;
  EXPECT_EQ(mx::violation_ratio(a, b), 0.0);
  EXPECT_EQ(mx::violation_ratio(b, a), 1.0);
}

TEST(Aso, ViolationRatioMatchesQuantileIntegralOracle) {
  std::mt19937 gen(6);
  const auto a = draw(gen, 30, 0.2, false);
  const auto b = draw(gen, 45, 0.0, false);
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  // Exact integral over the piecewise-constant quantile functions.
  std::vector<double> knots{0.0, 1.0};
  for (std::size_t i = 1; i < sa.size(); ++i) knots.push_back(double(i) / sa.size());
  for (std::size_t i = 1; i < sb.size(); ++i) knots.push_back(double(i) / sb.size());
  std::sort(knots.begin(), knots.end());
  double viol = 0, total = 0;
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    const double lo = knots[k], hi = knots[k + 1];
    if (hi <= lo) continue;
    const double mid = (lo + hi) / 2;
    const double qa = sa[std::min<std::size_t>(sa.size() - 1, std::size_t(mid * sa.size()))];
    const double qb = sb[std::min<std::size_t>(sb.size() - 1, std::size_t(mid * sb.size()))];
    const double sq = (qa - qb) * (qa - qb) * (hi - lo);
    total += sq;
    if (qa < qb) viol += sq;
  }
  // Midpoint grid with dt = 1e-4 converges to the exact integral.
  EXPECT_NEAR(mx::violation_ratio(a, b, 1e-4), viol / total, 2e-3);
}

TEST(Aso, ClearDominanceBothWays) {
  std::mt19937 gen(7);
  const auto b = draw(gen, 50, 0, false);
  std::vector<double> a = b;
  for (auto& v : a) v += 10;
  const auto ab = mx::aso(a, b, {.alpha = 0.05, .n_bootstrap = 1000, .seed = 1});
  EXPECT_LE(ab.eps_min, 0.05);
  EXPECT_TRUE(ab.a_better());
  const auto ba = mx::aso(b, a, {.alpha = 0.05, .n_bootstrap = 1000, .seed = 1});
  EXPECT_GE(ba.eps_min, 0.95);
  EXPECT_FALSE(ba.a_better());
}

TEST(Aso, SameDistributionIsInconclusive) {
  std::mt19937 gen(8);
  const auto a = draw(gen, 50, 0, false);
  const auto b = draw(gen, 50, 0, false);
  const auto r = mx::aso(a, b, {.seed = 3});
  EXPECT_GE(r.eps_min, 0.4);
  EXPECT_LE(r.eps_min, 1.0);
}

TEST(Aso, DeterministicAndValidated) {
  std::mt19937 gen(9);
  const auto a = draw(gen, 20, 0.3, false);
  const auto b = draw(gen, 20, 0, false);
  const auto r1 = mx::aso(a, b, {.seed = 11});
  const auto r2 = mx::aso(a, b, {.seed = 11});
  EXPECT_EQ(r1.eps_min, r2.eps_min);
  EXPECT_EQ(r1.n_bootstrap, 1000);
  EXPECT_THROW(mx::aso(std::vector<double>{1, 2, 3, 4}, b), ValidationError);
}
