#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "noisyood/error.hpp"
#include "noisyood/noise.hpp"

using namespace noisyood;

namespace {

Labels balanced(int n, int c) {
  Labels y(n);
  for (int i = 0; i < n; ++i) y[i] = i % c;
  return y;
}

int mismatches(const Labels& a, const Labels& b) {
  int m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m += a[i] != b[i];
  return m;
}

TransitionMatrix random_stochastic(int c, uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix m(c, c);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = u(gen);
    m.row(i) /= m.row(i).sum();
  }
  return TransitionMatrix(m);
}

}  // namespace

TEST(InjectUniform, ZeroRateIsIdentity) {
  const auto y = balanced(100, 5);
  EXPECT_EQ(inject_uniform(y, 5, 0.0, 1), y);
}

TEST(InjectUniform, FullRateChangesEveryLabel) {
  const auto y = balanced(1000, 3);
  const auto z = inject_uniform(y, 3, 1.0, 2);
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_NE(y[i], z[i]);
    EXPECT_GE(z[i], 0);
    EXPECT_LT(z[i], 3);
  }
}

TEST(InjectUniform, ExactFlipCount) {
  const auto y = balanced(10000, 10);
  EXPECT_EQ(mismatches(y, inject_uniform(y, 10, 0.4, 3)), 4000);
  for (double rate : {0.05, 0.1234, 0.5, 0.77}) {
    const auto z = inject_uniform(y, 10, rate, 4);
    EXPECT_EQ(mismatches(y, z), static_cast<int>(std::lround(rate * 10000)));
  }
  const auto small = balanced(7, 2);
  EXPECT_EQ(mismatches(small, inject_uniform(small, 2, 0.5, 9)), 4);  // round(3.5)
}

TEST(InjectUniform, DeterministicAndTargetsRoughlyUniform) {
  const auto y = Labels(30000, 0);
  const auto a = inject_uniform(y, 4, 0.9, 5);
  EXPECT_EQ(a, inject_uniform(y, 4, 0.9, 5));
  EXPECT_NE(a, inject_uniform(y, 4, 0.9, 6));
  std::vector<int> counts(4, 0);
  for (int v : a) counts[v]++;
  EXPECT_EQ(counts[0], 3000);
  for (int c = 1; c < 4; ++c) EXPECT_NEAR(counts[c] / 27000.0, 1.0 / 3.0, 0.02);
}

TEST(InjectUniform, RejectsBadRate) {
  const auto y = balanced(10, 2);
  EXPECT_THROW(inject_uniform(y, 2, -0.1, 0), ValidationError);
  EXPECT_THROW(inject_uniform(y, 2, 1.1, 0), ValidationError);
  EXPECT_THROW(inject_uniform(y, 1, 0.1, 0), ValidationError);
}

TEST(InjectUniformBernoulli, RateInExpectation) {
  const auto y = balanced(20000, 4);
  const auto z = inject_uniform_bernoulli(y, 4, 0.3, 7);
  EXPECT_NEAR(mismatches(y, z) / 20000.0, 0.3, 0.015);
}

TEST(InjectClassConditional, IdentityAndPermutation) {
  const auto y = balanced(100, 4);
  EXPECT_EQ(inject_class_conditional(y, TransitionMatrix::identity(4), 1), y);
  Matrix shift = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) shift(i, (i + 1) % 4) = 1.0;
  const auto z = inject_class_conditional(y, TransitionMatrix(shift), 1);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(z[i], (y[i] + 1) % 4);
}

TEST(InjectClassConditional, EmpiricalRowsMatchTarget) {
  const auto t = random_stochastic(4, 8);
  const auto y = balanced(100000, 4);
  const auto z = inject_class_conditional(y, t, 9);
  Matrix counts = Matrix::Zero(4, 4);
  for (std::size_t i = 0; i < y.size(); ++i) counts(y[i], z[i]) += 1;
  for (int r = 0; r < 4; ++r) {
    const Eigen::RowVectorXd emp = counts.row(r) / counts.row(r).sum();
    EXPECT_LE((emp - t.matrix().row(r)).cwiseAbs().sum(), 0.02);
  }
}

TEST(TransitionMatrix, RejectsNonStochastic) {
  Matrix m(2, 2);
  m << 0.5, 0.4, 0, 1;
  EXPECT_THROW(TransitionMatrix{m}, ValidationError);
  m << 1.2, -0.2, 0, 1;
  EXPECT_THROW(TransitionMatrix{m}, ValidationError);
  EXPECT_THROW(TransitionMatrix{Matrix::Ones(2, 3) / 3.0}, ValidationError);
  const auto t = random_stochastic(3, 1);
  EXPECT_EQ(TransitionMatrix::from_json(t.to_json()).matrix(), t.matrix());
}

TEST(EstimateTransition, HandCount) {
  const Labels clean{0, 0, 1, 1}, noisy{0, 1, 1, 1};
  const auto e = estimate_transition(clean, noisy, 2);
  EXPECT_DOUBLE_EQ(e.transition(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(e.transition(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(e.transition(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(e.transition(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(e.rate, 0.25);
}

TEST(EstimateTransition, CleanEqualsNoisy) {
  const auto y = balanced(50, 5);
  const auto e = estimate_transition(y, y, 5);
  EXPECT_EQ(e.transition.matrix(), Matrix::Identity(5, 5));
  EXPECT_EQ(e.rate, 0.0);
}

TEST(EstimateTransition, MissingClassAndLengthErrors) {
  const Labels clean{0, 0, 2}, noisy{0, 1, 2};
  EXPECT_THROW(estimate_transition(clean, noisy, 3), ValidationError);
  EXPECT_THROW(estimate_transition(clean, Labels{0, 1}, 3), ValidationError);
}

TEST(EstimateTransition, ClosureWithInjection) {
  for (uint32_t seed : {1u, 2u, 3u}) {
    const auto t = random_stochastic(5, seed);
    const auto y = balanced(10000, 5);
    const auto e = estimate_transition(y, inject_class_conditional(y, t, seed), 5);
    for (int r = 0; r < 5; ++r) {
      EXPECT_LE((e.transition.matrix().row(r) - t.matrix().row(r)).cwiseAbs().sum(), 0.05);
      EXPECT_NEAR(e.transition.matrix().row(r).sum(), 1.0, 1e-12);
    }
  }
}

TEST(NoiseSpec, DispatchAndAttach) {
  const auto y = balanced(200, 4);
  NoiseSpec su;
  su.rate = 0.25;
  su.seed = 3;
  EXPECT_EQ(apply_noise(su, y, 4), inject_uniform(y, 4, 0.25, 3));

  NoiseSpec scc;
  scc.model = NoiseModel::kClassConditional;
  EXPECT_THROW(scc.validate(y.size()), ValidationError);
  scc.transition = TransitionMatrix::identity(4);
  EXPECT_EQ(apply_noise(scc, y, 4), y);

  NoiseSpec real;
  real.model = NoiseModel::kReal;
  real.noisy_labels = Labels(199, 0);
  EXPECT_THROW(real.validate(y.size()), ValidationError);
  real.noisy_labels = Labels(200, 1);
  EXPECT_EQ(apply_noise(real, y, 4), *real.noisy_labels);

  TensorBundle b;
  b.tensors["label"] = Tensor::from_labels(y);
  const auto noisy = apply_noise(su, y, 4);
  attach_noisy_labels(b, "SU-0.25", noisy, su);
  EXPECT_EQ(b.at("label.noisy.SU-0.25").to_labels(), noisy);
  EXPECT_EQ(b.metadata["noise"]["SU-0.25"]["model"], "SU");
  EXPECT_EQ(noise_model_from_string(to_string(NoiseModel::kClassConditional)), NoiseModel::kClassConditional);
}
