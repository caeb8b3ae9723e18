#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace optpolicy;
using namespace testutil;

namespace {

Hyperparameters hp_of(int depth, double alpha = 0.0, std::size_t restarts = 20, std::uint64_t seed = 1,
                      std::size_t min_leaf = 1) {
  Hyperparameters hp;
  hp.max_depth = depth;
  hp.alpha = alpha;
  hp.restarts = restarts;
  hp.seed = seed;
  hp.min_leaf = min_leaf;
  return hp;
}

double penalized(const PolicyTree& t, const RewardMatrix& r, const MatrixD& x) {
  return penalized_objective(t, r, x, t.hyperparams.alpha);
}

// Independent brute force over every tree of depth <= depth on `rows`:
// leaf, or any midpoint split with both sides solved recursively.
double brute_force(const RewardMatrix& r, const MatrixD& x, const std::vector<std::size_t>& rows, int depth,
                   double alpha_raw, std::size_t min_leaf) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < r.num_treatments(); ++t) {
    double s = 0.0;
    for (std::size_t i : rows) s += r.values(i, t);
    best = std::min(best, s);
  }
  if (depth == 0) return best;
  for (std::size_t f = 0; f < x.cols(); ++f) {
    std::set<double> values;
    for (std::size_t i : rows) values.insert(x(i, f));
    for (auto it = values.begin(); std::next(it) != values.end(); ++it) {
      const double thr = (*it + *std::next(it)) / 2.0;
      std::vector<std::size_t> l, rr;
      for (std::size_t i : rows) (x(i, f) < thr ? l : rr).push_back(i);
      if (l.size() < min_leaf || rr.size() < min_leaf) continue;
      best = std::min(best, alpha_raw + brute_force(r, x, l, depth - 1, alpha_raw, min_leaf) +
                                brute_force(r, x, rr, depth - 1, alpha_raw, min_leaf));
    }
  }
  return best;
}

void expect_leaf_optimal(const PolicyTree& tree, const RewardMatrix& r, const MatrixD& x) {
  std::map<std::size_t, std::vector<std::size_t>> by_leaf;
  for (std::size_t i = 0; i < x.rows(); ++i) by_leaf[tree.assign_leaf(x.row(i))].push_back(i);
  for (auto& [leaf, rows] : by_leaf) {
    EXPECT_EQ(tree.nodes[leaf].treatment, leaf_best_treatment(rows, r).treatment);
    EXPECT_EQ(tree.nodes[leaf].n_train, rows.size());
  }
}

void expect_constraints(const PolicyTree& tree, const Hyperparameters& hp) {
  EXPECT_NO_THROW(tree.validate());
  EXPECT_LE(tree.depth(), hp.max_depth);
  for (std::size_t leaf : tree.leaves()) EXPECT_GE(tree.nodes[leaf].n_train, hp.min_leaf);
}

}  // namespace

TEST(LeafBest, ArgminOfColumnSums) {
  RewardMatrix r(MatrixD{{1.0, 0.0, 3.0}, {2.0, 1.0, 4.0}}, {"a", "b", "c"});
  std::vector<std::size_t> rows{0, 1};
  auto c = leaf_best_treatment(rows, r);
  EXPECT_EQ(c.treatment, 1u);  // sums (3, 1, 7)
  EXPECT_EQ(c.cost, 1.0);
}

TEST(LeafBest, TiesGoToLowestIndex) {
  RewardMatrix r(MatrixD{{0.5, 0.5}}, {"a", "b"});
  std::vector<std::size_t> rows{0};
  auto c = leaf_best_treatment(rows, r);
  EXPECT_EQ(c.treatment, 0u);
  EXPECT_EQ(c.cost, 0.5);
  EXPECT_THROW(leaf_best_treatment(std::vector<std::size_t>{}, r), InternalError);
}

TEST(LeafBest, CostBoundsEveryColumn) {
  Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    auto r = random_rewards(15, 4, rng);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 15; ++i) {
      if (rng() % 2) rows.push_back(i);
    }
    if (rows.empty()) continue;
    auto c = leaf_best_treatment(rows, r);
    for (std::size_t t = 0; t < 4; ++t) {
      double s = 0.0;
      for (std::size_t i : rows) s += r.values(i, t);
      EXPECT_LE(c.cost, s);
    }
  }
}

TEST(Greedy, DominantColumnGivesSingleLeaf) {
  Rng rng(2);
  auto x = random_matrix(50, 3, rng);
  auto r = random_rewards(50, 3, rng);
  for (std::size_t i = 0; i < 50; ++i) r.values(i, 2) = -5.0;
  auto tree = fit_greedy(r, x, hp_of(3));
  EXPECT_EQ(tree.nodes.size(), 1u);
  EXPECT_EQ(tree.nodes[0].treatment, 2u);
}

TEST(Greedy, OneDimensionalStep) {
  Rng rng(3);
  const std::size_t n = 100;
  auto x = random_matrix(n, 1, rng);
  MatrixD g(n, 2);
  double max_neg = -1.0, min_pos = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool neg = x(i, 0) < 0;
    g(i, 0) = neg ? 0.0 : 1.0;
    g(i, 1) = neg ? 1.0 : 0.0;
    if (neg) max_neg = std::max(max_neg, x(i, 0));
    else min_pos = std::min(min_pos, x(i, 0));
  }
  RewardMatrix r(g, {"1", "2"});
  auto tree = fit_greedy(r, x, hp_of(2));
  ASSERT_EQ(tree.num_branches(), 1u);
  EXPECT_EQ(tree.nodes[0].threshold, (max_neg + min_pos) / 2.0);
  EXPECT_EQ(tree.nodes[tree.nodes[0].left].treatment, 0u);
  EXPECT_EQ(tree.nodes[tree.nodes[0].right].treatment, 1u);
  EXPECT_EQ(tree.objective_train, 0.0);

  // The separable instance has a unique depth-1 optimum.
  auto ex = fit_exhaustive(r, x, hp_of(1));
  EXPECT_TRUE(ex.same_structure(fit_greedy(r, x, hp_of(1))));
}

TEST(Optimal, HugeAlphaGivesGlobalArgmin) {
  Rng rng(4);
  auto x = random_matrix(40, 2, rng);
  auto r = random_rewards(40, 3, rng);
  auto tree = fit_optimal(r, x, hp_of(3, 10.0));
  ASSERT_EQ(tree.nodes.size(), 1u);
  std::vector<std::size_t> all(40);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(tree.nodes[0].treatment, leaf_best_treatment(all, r).treatment);
}

TEST(Optimal, DepthZeroIsSingleLeaf) {
  Rng rng(5);
  auto x = random_matrix(20, 2, rng);
  auto r = random_rewards(20, 3, rng);
  for (auto method : {TreeMethod::kGreedy, TreeMethod::kOptimal, TreeMethod::kExhaustive}) {
    auto tree = fit_tree(method, r, x, hp_of(0));
    EXPECT_EQ(tree.nodes.size(), 1u);
  }
}

TEST(Optimal, MatchesExhaustiveOnSmallInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto x = random_matrix(30, 2, rng);
    auto r = random_rewards(30, 3, rng);
    auto hp = hp_of(2, 0.0, 50, seed);
    auto opt = fit_optimal(r, x, hp);
    auto ex = fit_exhaustive(r, x, hp);
    EXPECT_NEAR(penalized(opt, r, x), penalized(ex, r, x), 1e-9) << "seed " << seed;
  }
}

TEST(Exhaustive, MatchesIndependentBruteForce) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng(seed);
    const std::size_t n = 6 + seed % 5;
    auto x = lattice_features(n, 2, rng, 4);
    auto r = random_rewards(n, 2 + seed % 2, rng);
    const double alpha = seed % 3 == 0 ? 0.05 : 0.0;
    const std::size_t min_leaf = 1 + seed % 2;
    const int depth = static_cast<int>(seed % 3);
    auto tree = fit_exhaustive(r, x, hp_of(depth, alpha, 1, 1, min_leaf));
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    const double oracle = brute_force(r, x, rows, depth, alpha * n, min_leaf) / n;
    EXPECT_NEAR(penalized(tree, r, x), oracle, 1e-12) << "seed " << seed;
  }
}

TEST(Exhaustive, ThreePointsByHand) {
  MatrixD x{{0.0}, {1.0}, {2.0}};
  RewardMatrix r(MatrixD{{0.0, 1.0}, {1.0, 0.0}, {1.0, 0.0}}, {"a", "b"});
  auto tree = fit_exhaustive(r, x, hp_of(1));
  ASSERT_EQ(tree.num_branches(), 1u);
  EXPECT_EQ(tree.nodes[0].threshold, 0.5);
  EXPECT_EQ(tree.objective_train, 0.0);
  // With alpha above the gain of 1/3 the leaf wins.
  auto leaf = fit_exhaustive(r, x, hp_of(1, 0.5));
  EXPECT_EQ(leaf.nodes.size(), 1u);
  EXPECT_NEAR(leaf.objective_train, 1.0 / 3.0, 1e-15);
}

TEST(Exhaustive, GuardsAndDepthLimit) {
  Rng rng(6);
  auto x = random_matrix(5002, 2, rng);
  auto r = random_rewards(5002, 2, rng);
  EXPECT_THROW(fit_exhaustive(r, x, hp_of(1)), ConfigError);
  auto xs = random_matrix(10, 2, rng);
  auto rs = random_rewards(10, 2, rng);
  EXPECT_THROW(fit_exhaustive(rs, xs, hp_of(3)), ConfigError);
}

TEST(Ordering, ExhaustiveOptimalGreedy) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed + 100);
    auto x = lattice_features(25, 3, rng, 6);
    auto r = random_rewards(25, 3, rng);
    auto hp = hp_of(2, seed % 2 ? 0.02 : 0.0, 30, seed);
    const double ex = penalized(fit_exhaustive(r, x, hp), r, x);
    const double opt = penalized(fit_optimal(r, x, hp), r, x);
    const double gr = penalized(fit_greedy(r, x, hp), r, x);
    EXPECT_LE(ex, opt + 1e-12);
    EXPECT_LE(opt, gr + 1e-12);
  }
}

TEST(Optimal, XorFindsZeroCostTree) {
  auto inst = xor_instance(400, 1);
  auto hp = hp_of(2, 0.0, 50, 1);
  auto opt = fit_optimal(inst.rewards, inst.features, hp);
  auto gr = fit_greedy(inst.rewards, inst.features, hp);
  EXPECT_EQ(opt.objective_train, 0.0);
  EXPECT_LE(opt.objective_train, gr.objective_train);
}

TEST(Invariants, LeafOptimalityAndConstraints) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    auto x = lattice_features(60, 3, rng, 8);
    auto r = random_rewards(60, 3, rng);
    auto hp = hp_of(1 + seed % 4, seed % 2 ? 0.01 : 0.0, 10, seed, 1 + seed % 5);
    for (auto method : {TreeMethod::kGreedy, TreeMethod::kOptimal}) {
      auto tree = fit_tree(method, r, x, hp);
      expect_leaf_optimal(tree, r, x);
      expect_constraints(tree, hp);
      EXPECT_NEAR(tree.objective_train, policy_objective(tree, r, x), 1e-12);
    }
    if (hp.max_depth <= 2) {
      auto tree = fit_exhaustive(r, x, hp);
      expect_leaf_optimal(tree, r, x);
      expect_constraints(tree, hp);
    }
  }
}

TEST(Invariants, MonotoneDescentWithinRestarts) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = random_matrix(80, 3, rng);
    auto r = random_rewards(80, 4, rng);
    auto fit = fit_optimal_traced(r, x, hp_of(3, 0.001, 20, seed));
    ASSERT_EQ(fit.traces.size(), 20u);
    EXPECT_EQ(fit.traces[0].init, "fit_greedy");
    for (const auto& tr : fit.traces) {
      ASSERT_FALSE(tr.objectives.empty());
      for (std::size_t k = 1; k < tr.objectives.size(); ++k) EXPECT_LT(tr.objectives[k], tr.objectives[k - 1]);
      EXPECT_GE(tr.sweeps, 1u);
    }
    double best = fit.traces[fit.best_restart].objectives.back();
    for (const auto& tr : fit.traces) EXPECT_LE(best, tr.objectives.back() + 1e-12);
    EXPECT_NEAR(fit.penalized_objective, penalized(fit.tree, r, x), 1e-12);
  }
}

TEST(Invariants, RowShiftKeepsExhaustiveTree) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    auto x = random_matrix(20, 2, rng);
    auto r = random_rewards(20, 3, rng);
    auto shifted = r;
    std::uniform_int_distribution<int> c(-8, 8);
    double total = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      const double ci = c(rng) * 0.25;  // dyadic shifts keep sums exact
      total += ci;
      for (std::size_t t = 0; t < 3; ++t) shifted.values(i, t) += ci;
    }
    auto hp = hp_of(2, 0.01);
    auto a = fit_exhaustive(r, x, hp);
    auto b = fit_exhaustive(shifted, x, hp);
    EXPECT_TRUE(a.same_structure(b)) << "seed " << seed;
    EXPECT_NEAR(policy_objective(a, shifted, x), policy_objective(a, r, x) + total / 20.0, 1e-12);
  }
}

TEST(Invariants, SearchStateCachesMatchRecomputation) {
  Rng rng(7);
  auto x = random_matrix(50, 2, rng);
  auto r = random_rewards(50, 3, rng);
  auto hp = hp_of(3);
  detail::Problem pr(r, x, hp);
  for (int rep = 0; rep < 20; ++rep) {
    detail::SearchState st(pr, detail::random_tree(pr, rng));
    EXPECT_TRUE(st.verify());
  }
  detail::SearchState st(pr, detail::greedy_tree(pr, true));
  EXPECT_TRUE(st.verify());
}

TEST(Determinism, SeedAndThreadCount) {
  Rng rng(8);
  auto x = random_matrix(100, 3, rng);
  auto r = random_rewards(100, 3, rng);
  auto hp = hp_of(3, 0.0, 16, 42);
  auto a = fit_optimal(r, x, hp);
  auto b = fit_optimal(r, x, hp);
  auto c = fit_optimal(r, x, hp, {}, 4);
  EXPECT_EQ(serialize_tree(a), serialize_tree(b));
  EXPECT_EQ(serialize_tree(a), serialize_tree(c));
}

TEST(Validation, ShapeAndLeafSize) {
  Rng rng(9);
  auto x = random_matrix(5, 2, rng);
  auto r = random_rewards(4, 2, rng);
  EXPECT_THROW(fit_greedy(r, x, hp_of(1)), InputError);
  auto r5 = random_rewards(5, 2, rng);
  EXPECT_THROW(fit_optimal(r5, x, hp_of(1, 0.0, 1, 1, 6)), InputError);
  EXPECT_THROW(fit_optimal(r5, x, hp_of(-1)), ConfigError);
}

TEST(Tune, PureNoiseSelectsSingleLeaf) {
  int depth_zero = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = random_matrix(200, 3, rng);
    MatrixD g(200, 2);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& v : g.data()) v = nd(rng);
    RewardMatrix r(g, {"a", "b"});
    TuneGrid grid;
    grid.depths = {1, 2, 3};
    grid.restarts = 5;
    auto res = tune(r, x, grid, seed);
    depth_zero += res.tree.nodes.size() == 1 ? 1 : 0;
  }
  EXPECT_GT(depth_zero, 5);
}

TEST(Tune, SignalInstanceSplits) {
  Rng rng(10);
  const std::size_t n = 300;
  auto x = random_matrix(n, 2, rng);
  MatrixD g(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    g(i, 0) = x(i, 0) < 0 ? 0.0 : 1.0;
    g(i, 1) = 1.0 - g(i, 0);
  }
  RewardMatrix r(g, {"1", "2"});
  TuneGrid grid;
  grid.restarts = 5;
  auto res = tune(r, x, grid, 3);
  EXPECT_GE(res.hp.max_depth, 1);
  EXPECT_LT(res.cells[res.selected].validation_score, 0.02);
  EXPECT_EQ(res.train_rows + res.validation_rows, n);
  EXPECT_EQ(res.validation_rows, 90u);
}

TEST(Tune, SingleCellIsRefitOnAllRows) {
  Rng rng(11);
  auto x = random_matrix(80, 2, rng);
  auto r = random_rewards(80, 3, rng);
  TuneGrid grid;
  grid.depths = {2};
  grid.alphas = {0.01};
  grid.restarts = 8;
  auto res = tune(r, x, grid, 5);
  auto direct = fit_optimal(r, x, res.hp);
  EXPECT_EQ(serialize_tree(res.tree), serialize_tree(direct));
  EXPECT_EQ(res.hp.max_depth, 2);
  EXPECT_EQ(res.hp.alpha, 0.01);
}

TEST(Tune, BadGrids) {
  Rng rng(12);
  auto x = random_matrix(20, 2, rng);
  auto r = random_rewards(20, 2, rng);
  TuneGrid grid;
  grid.depths = {};
  EXPECT_THROW(tune(r, x, grid, 1), ConfigError);
  grid = {};
  grid.alphas = {};
  EXPECT_THROW(tune(r, x, grid, 1), ConfigError);
  grid = {};
  grid.validation_fraction = 1.0;
  EXPECT_THROW(tune(r, x, grid, 1), ConfigError);
}
