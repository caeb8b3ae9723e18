#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace optpolicy;

namespace {

std::vector<double> unit_x() { return std::vector<double>(kSyntheticDims, 0.0); }

GeneratorSpec binary_spec(FnId b, FnId e, std::size_t n, std::uint64_t seed) {
  GeneratorSpec s;
  s.family = Family::kBinary;
  s.baseline = b;
  s.effects = {e};
  s.n_train = n;
  s.n_test = 1000;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Features, Marginals) {
  auto x = sample_features(100000, 1);
  ASSERT_EQ(x.cols(), 10u);
  for (std::size_t j = 0; j < 10; ++j) {
    auto col = x.column(j);
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / col.size();
    if (j % 2 == 1) {
      for (double v : col) ASSERT_TRUE(v == 0.0 || v == 1.0);
      EXPECT_GT(mean, 0.48);
      EXPECT_LT(mean, 0.52);
    } else {
      EXPECT_GT(mean, -0.02);
      EXPECT_LT(mean, 0.02);
      double var = 0.0;
      for (double v : col) var += (v - mean) * (v - mean);
      var /= col.size();
      EXPECT_NEAR(var, 1.0, 4.0 * std::sqrt(2.0 / 100000.0));
    }
  }
  EXPECT_EQ(sample_features(50, 9), sample_features(50, 9));
}

TEST(Functions, TableValues) {
  auto x = unit_x();
  x[0] = 2.0;
  EXPECT_EQ(eval_f(FnId::f2, x), 0.0);
  EXPECT_EQ(eval_f(FnId::f3, x), 0.0);
  x[0] = 0.0;
  EXPECT_EQ(eval_f(FnId::f2, x), -5.0);
  x[0] = 1.0;
  EXPECT_EQ(eval_g(GnId::g1, x, 1.0), 0.0);
  EXPECT_EQ(eval_g(GnId::g1, x, 3.0), 2.0);
  EXPECT_EQ(eval_f(FnId::f1, x), 0.0);
  // f4 enumerates the eight binary patterns of (x2, x4, x6).
  const double want[8] = {8, 7, 6, 5, 4, 3, 2, 1};
  for (int k = 0; k < 8; ++k) {
    auto y = unit_x();
    y[1] = (k >> 2) & 1;
    y[3] = (k >> 1) & 1;
    y[5] = k & 1;
    EXPECT_EQ(eval_f(FnId::f4, y), want[k]) << k;
  }
  EXPECT_THROW(fn_from_int(9), ConfigError);
  EXPECT_THROW(gn_from_int(0), ConfigError);
  EXPECT_THROW(eval_f(FnId::f1, std::vector<double>(3)), InputError);
}

TEST(Functions, F8IsScaledSum) {
  auto x = sample_features(500, 2);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    EXPECT_NEAR(eval_f(FnId::f8, x.row(i)), (eval_f(FnId::f4, x.row(i)) + eval_f(FnId::f5, x.row(i))) / std::sqrt(2.0),
                1e-12);
  }
}

TEST(Standardize, ConstantMapsToZero) {
  auto s = standardize_f(FnId::f1, 1, 10000);
  auto x = sample_features(100, 3);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(s(x.row(i)), 0.0);
}

TEST(Standardize, FreshSampleMoments) {
  for (FnId id : {FnId::f5, FnId::f2, FnId::f6}) {
    auto s = standardize_f(id, 1);
    auto x = sample_features(100000, 99);
    double m = 0.0, q = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double v = s(x.row(i));
      m += v;
      q += v * v;
    }
    m /= x.rows();
    const double var = q / x.rows() - m * m;
    EXPECT_GT(m, -0.05);
    EXPECT_LT(m, 0.05);
    EXPECT_GT(var, 0.9);
    EXPECT_LT(var, 1.1);
  }
}

TEST(Standardize, IdempotentAndAffine) {
  auto ref = sample_features(100000, 5);
  auto once = standardize_f(FnId::f7, ref);
  auto twice = standardize([once](std::span<const double> x) { return once(x); }, ref);
  EXPECT_LT(std::abs(twice.mean), 0.05);
  EXPECT_LT(std::abs(twice.sd - 1.0), 0.05);
  auto x = sample_features(200, 6);
  for (std::size_t i = 1; i < x.rows(); ++i) {
    const bool raw = eval_f(FnId::f7, x.row(i)) < eval_f(FnId::f7, x.row(i - 1));
    EXPECT_EQ(raw, once(x.row(i)) < once(x.row(i - 1)));
  }
}

TEST(Binary, ZeroEffectHasZeroRegret) {
  auto p = generate_binary(binary_spec(FnId::f5, FnId::f1, 50, 1));
  std::vector<std::size_t> all_one(p.test.optimal.size(), 1);
  EXPECT_EQ(mean_regret(all_one, p.test), 0.0);
}

TEST(Binary, AssignmentFollowsLogisticOfBaseline) {
  EXPECT_NEAR(assignment_probabilities(Family::kBinary, 40.0)[1], 1.0, 1e-12);
  auto p = generate_binary(binary_spec(FnId::f1, FnId::f2, 100000, 2));
  const double treated =
      static_cast<double>(std::count(p.train.arms.begin(), p.train.arms.end(), 1u)) / p.train.size();
  EXPECT_GT(treated, 0.48);
  EXPECT_LT(treated, 0.52);
}

TEST(Binary, ObservedOutcomesAreNoisyPotentialOutcomes) {
  auto spec = binary_spec(FnId::f5, FnId::f2, 2000, 3);
  auto p = generate_binary(spec);
  double ss = 0.0;
  for (std::size_t i = 0; i < p.train.size(); ++i) {
    const double r = p.train.outcomes[i] - p.train_potential(i, p.train.arms[i]);
    ss += r * r;
  }
  EXPECT_NEAR(std::sqrt(ss / p.train.size()), 0.1, 0.01);
  // Oracle optimum is the row-wise argmin and prescribing it has zero regret.
  EXPECT_EQ(p.test.optimal, rowwise_argmin(p.test.outcomes));
  EXPECT_EQ(mean_regret(p.test.optimal, p.test), 0.0);
}

TEST(MultiDiscrete, EqualSplitAndStochasticRows) {
  GeneratorSpec s;
  s.family = Family::kMultiDiscrete;
  s.baseline = FnId::f6;
  s.effects = {FnId::f2, FnId::f7};
  s.n_train = 500;
  s.n_test = 100;
  auto p = generate_multi_discrete(s);
  for (std::size_t i = 0; i < p.train.size(); ++i) {
    auto r = p.train_propensity.row(i);
    EXPECT_EQ(r[1], r[2]);
    EXPECT_NEAR(r[0] + r[1] + r[2], 1.0, 1e-15);
  }
  s.effects = {FnId::f1, FnId::f1};
  auto q = generate_multi_discrete(s);
  std::vector<std::size_t> any(q.test.optimal.size(), 2);
  EXPECT_EQ(mean_regret(any, q.test), 0.0);
}

TEST(Continuous, SoftmaxProperties) {
  std::vector<double> y{3.0, -1.0, 0.5, 0.5, 2.0};
  auto w = softmax_neg(y);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-15);
  EXPECT_GT(w[1], w[2]);
  EXPECT_GT(w[2], w[4]);
  EXPECT_GT(w[4], w[0]);
  EXPECT_EQ(w[2], w[3]);
}

TEST(Continuous, FlatOutcomeGivesUniformDoses) {
  std::vector<double> y(5, 1.0);
  for (double v : softmax_neg(y)) EXPECT_DOUBLE_EQ(v, 0.2);
  // g2 = x1 * t is nearly flat in t when x1 is near 0, so the chosen dose is
  // close to uniform on (-4, 4).
  GeneratorSpec s;
  s.family = Family::kSingleContinuous;
  s.outcomes = {GnId::g2};
  s.n_train = 100000;
  s.n_test = 1;
  s.noise_sd = 0.0;
  auto p = generate_continuous(s);
  std::vector<double> counts(4, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < p.train.size(); ++i) {
    if (std::abs(p.train.features(i, 0)) >= 0.02) continue;
    const auto bin = static_cast<std::size_t>((p.train.doses(i, 0) + 4.0) / 2.0);
    counts[std::min<std::size_t>(bin, 3)] += 1.0;
    total += 1.0;
  }
  ASSERT_GT(total, 1000.0);
  double chi = 0.0;
  for (double c : counts) chi += (c - total / 4) * (c - total / 4) / (total / 4);
  EXPECT_LT(chi, 16.27);  // chi-square(3) at p = 0.001
}

TEST(Continuous, G2OracleIsEndpointBySign) {
  GeneratorSpec s;
  s.family = Family::kSingleContinuous;
  s.outcomes = {GnId::g2};
  s.n_train = 100;
  s.n_test = 2000;
  auto p = generate_continuous(s);
  ASSERT_EQ(p.space.num_candidates(), 10u);
  for (std::size_t i = 0; i < s.n_test; ++i) {
    const double x1 = p.test.features(i, 0);
    if (x1 > 0) EXPECT_EQ(p.test.optimal[i], 0u);
    if (x1 < 0) EXPECT_EQ(p.test.optimal[i], 9u);
  }
  for (std::size_t i = 0; i < p.train.size(); ++i) {
    EXPECT_GT(p.train.doses(i, 0), -4.0);
    EXPECT_LT(p.train.doses(i, 0), 4.0);
  }
}

TEST(Continuous, PairsUseSixBySixGrid) {
  GeneratorSpec s;
  s.family = Family::kMultiContinuous;
  s.outcomes = {GnId::g1, GnId::g2};
  s.n_train = 50;
  s.n_test = 20;
  auto p = generate_continuous(s);
  EXPECT_EQ(p.space.num_candidates(), 36u);
  EXPECT_EQ(p.train.doses.cols(), 2u);
  auto d = p.space.candidate_doses(7);
  EXPECT_NEAR(p.test.outcomes(3, 7), eval_g(GnId::g1, p.test.features.row(3), d[0]) +
                                         eval_g(GnId::g2, p.test.features.row(3), d[1]),
              1e-12);
}

TEST(Continuous, LowerOutcomeDosesAreChosenMoreOften) {
  GeneratorSpec s;
  s.family = Family::kSingleContinuous;
  s.outcomes = {GnId::g1};
  s.n_train = 20000;
  s.n_test = 1;
  s.noise_sd = 0.0;
  auto p = generate_continuous(s);
  // Under softmax selection the chosen dose sits closer to x1 than a uniform draw.
  double chosen = 0.0, uniform = 0.0;
  Rng rng(8);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (std::size_t i = 0; i < p.train.size(); ++i) {
    chosen += std::abs(p.train.features(i, 0) - p.train.doses(i, 0));
    uniform += std::abs(p.train.features(i, 0) - u(rng));
    EXPECT_NEAR(p.train.outcomes[i], std::abs(p.train.features(i, 0) - p.train.doses(i, 0)), 1e-12);
  }
  EXPECT_LT(chosen, 0.8 * uniform);
}

TEST(Regret, BasicsAndErrors) {
  OracleSet o;
  o.outcomes = MatrixD{{0.0, 1.0}, {1.0, 0.0}};
  EXPECT_EQ(mean_regret(std::vector<std::size_t>{0, 1}, o), 0.0);
  EXPECT_EQ(mean_regret(std::vector<std::size_t>{1, 0}, o), 1.0);
  EXPECT_EQ(mean_regret(std::vector<std::size_t>{1, 1}, o), 0.5);
  EXPECT_THROW(mean_regret(std::vector<std::size_t>{0}, o), InputError);
  EXPECT_THROW(mean_regret(std::vector<std::size_t>{0, 2}, o), InputError);
}

TEST(Regret, NonNegativeAndZeroOnlyAtOptimum) {
  Rng rng(9);
  auto p = generate_binary(binary_spec(FnId::f5, FnId::f3, 10, 4));
  std::uniform_int_distribution<std::size_t> coin(0, 1);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::size_t> z(p.test.optimal.size());
    for (auto& v : z) v = coin(rng);
    const double r = mean_regret(z, p.test);
    EXPECT_GE(r, 0.0);
    bool all_opt = true;
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto row = p.test.outcomes.row(i);
      all_opt = all_opt && row[z[i]] == *std::min_element(row.begin(), row.end());
    }
    EXPECT_EQ(r == 0.0, all_opt);
  }
}

TEST(Generator, DeterministicGivenSeed) {
  auto a = generate_binary(binary_spec(FnId::f4, FnId::f3, 100, 7));
  auto b = generate_binary(binary_spec(FnId::f4, FnId::f3, 100, 7));
  EXPECT_EQ(a.train.features, b.train.features);
  EXPECT_EQ(a.train.outcomes, b.train.outcomes);
  EXPECT_EQ(a.train.arms, b.train.arms);
  EXPECT_EQ(a.test.outcomes, b.test.outcomes);
  GeneratorSpec bad = binary_spec(FnId::f4, FnId::f3, 100, 7);
  bad.noise_sd = -1;
  EXPECT_THROW(generate(bad), ConfigError);
}
