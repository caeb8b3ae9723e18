#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace optpolicy;
using namespace testutil;

TEST(Routing, SingleLeafReturnsRoot) {
  auto tree = PolicyTree::single_leaf(1, 10, {"x1", "x2"}, {"A", "B"});
  EXPECT_EQ(tree.assign_leaf(std::vector<double>{5.0, -3.0}), 0u);
  EXPECT_EQ(tree.prescribe(std::vector<double>{-100.0, 0.0}), 1u);
}

TEST(Routing, LeftIffStrictlyBelowThreshold) {
  PolicyTree tree;
  tree.num_features = 1;
  tree.feature_names = {"x1"};
  tree.treatment_labels = {"L", "R"};
  tree.nodes = {Node::make_branch(0, 0.0, 1, 2), Node::make_leaf(0, 1), Node::make_leaf(1, 1)};
  EXPECT_EQ(tree.assign_leaf(std::vector<double>{-1.0}), 1u);
  EXPECT_EQ(tree.assign_leaf(std::vector<double>{0.0}), 2u);
  EXPECT_EQ(tree.assign_leaf(std::vector<double>{1e-300}), 2u);
}

TEST(Routing, TwoLevelTreeComposesTests) {
  auto tree = two_level_tree();
  EXPECT_EQ(tree.assign_leaf(std::vector<double>{-1.0, -1.0}), 2u);
  EXPECT_EQ(tree.assign_leaf(std::vector<double>{-1.0, 1.0}), 3u);
  EXPECT_EQ(tree.assign_leaf(std::vector<double>{1.0, -1.0}), 4u);
  EXPECT_EQ(tree.prescribe(std::vector<double>{-1.0, 1.0}), 1u);
  auto path = tree.path(std::vector<double>{-1.0, 1.0});
  ASSERT_EQ(path.size(), 2u);
  EXPECT_EQ(path[0].feature, 0u);
  EXPECT_TRUE(path[0].went_left);
  EXPECT_EQ(path[1].feature, 1u);
  EXPECT_FALSE(path[1].went_left);
}

TEST(Routing, RejectsBadInput) {
  auto tree = two_level_tree();
  EXPECT_THROW(tree.assign_leaf(std::vector<double>{1.0}), InputError);
  EXPECT_THROW(tree.assign_leaf(std::vector<double>{1.0, std::nan("")}), InputError);
  EXPECT_THROW(tree.prescribe(MatrixD{{1.0, 2.0, 3.0}}), InputError);
  EXPECT_THROW(tree.prescribe(MatrixD{{1.0, INFINITY}}), InputError);
}

TEST(Routing, BatchMatchesElementwise) {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    auto tree = random_tree(3, 3, 3, rng);
    auto x = random_matrix(40, 3, rng);
    auto z = tree.prescribe(x);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      EXPECT_EQ(z[i], tree.prescribe(x.row(i)));
      EXPECT_EQ(tree.assign_leaf(x.row(i)), tree.assign_leaf(x.row(i)));
    }
  }
}

TEST(Objective, SingleLeafIsColumnMean) {
  auto tree = PolicyTree::single_leaf(0, 2, {"x1"}, {"1", "2"});
  RewardMatrix r(MatrixD{{1.0, 9.0}, {3.0, 9.0}}, {"1", "2"});
  EXPECT_DOUBLE_EQ(policy_objective(tree, r, MatrixD{{0.0}, {1.0}}), 2.0);
}

TEST(Objective, PerfectRoutingIsZero) {
  PolicyTree tree;
  tree.num_features = 1;
  tree.feature_names = {"x1"};
  tree.treatment_labels = {"1", "2"};
  tree.nodes = {Node::make_branch(0, 0.5, 1, 2), Node::make_leaf(0, 1), Node::make_leaf(1, 1)};
  RewardMatrix r(MatrixD{{0.0, 5.0}, {5.0, 0.0}}, {"1", "2"});
  EXPECT_EQ(policy_objective(tree, r, MatrixD{{0.0}, {1.0}}), 0.0);
}

TEST(Objective, MatchesDirectIndexingAndLeafDecomposition) {
  Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    auto tree = random_tree(2, 3, 2, rng);
    auto x = random_matrix(10, 2, rng);
    auto r = random_rewards(10, 3, rng);
    double brute = 0.0;
    std::map<std::size_t, double> per_leaf;
    for (std::size_t i = 0; i < 10; ++i) {
      std::size_t id = 0;
      while (!tree.nodes[id].leaf) {
        id = x(i, tree.nodes[id].feature) < tree.nodes[id].threshold ? tree.nodes[id].left : tree.nodes[id].right;
      }
      brute += r.values(i, tree.nodes[id].treatment);
      per_leaf[id] += r.values(i, tree.nodes[id].treatment);
    }
    double by_leaf = 0.0;
    for (auto& [leaf, s] : per_leaf) by_leaf += s;
    EXPECT_NEAR(policy_objective(tree, r, x), brute / 10.0, 1e-15);
    EXPECT_NEAR(policy_objective(tree, r, x), by_leaf / 10.0, 1e-15);
  }
}

TEST(Objective, ShapeMismatchIsInputError) {
  auto tree = PolicyTree::single_leaf(0, 2, {"x1"}, {"1", "2"});
  RewardMatrix r(MatrixD{{1.0, 2.0}}, {"1", "2"});
  EXPECT_THROW(policy_objective(tree, r, MatrixD{{0.0}, {1.0}}), InputError);
}

TEST(Objective, PenaltyCountsBranches) {
  auto tree = two_level_tree();
  RewardMatrix r(MatrixD{{1.0, 2.0, 3.0}}, {"A", "B", "C"});
  MatrixD x{{5.0, 5.0}};
  EXPECT_DOUBLE_EQ(penalized_objective(tree, r, x, 0.25), 3.0 + 0.5);
}

TEST(Tree, EveryLeafIsReachable) {
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    auto tree = random_tree(3, 2, 4, rng);
    for (std::size_t leaf : tree.leaves()) {
      // Build a point from the threshold path: walk up, tightening a box.
      std::vector<double> lo(3, -1e9), hi(3, 1e9);
      std::vector<std::size_t> parent(tree.nodes.size(), Node::kNone);
      for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        if (!tree.nodes[i].leaf) {
          parent[tree.nodes[i].left] = i;
          parent[tree.nodes[i].right] = i;
        }
      }
      bool feasible = true;
      for (std::size_t c = leaf; parent[c] != Node::kNone; c = parent[c]) {
        const Node& b = tree.nodes[parent[c]];
        if (b.left == c) {
          hi[b.feature] = std::min(hi[b.feature], b.threshold);
        } else {
          lo[b.feature] = std::max(lo[b.feature], b.threshold);
        }
      }
      std::vector<double> x(3);
      for (std::size_t j = 0; j < 3; ++j) {
        if (!(lo[j] < hi[j])) feasible = false;
        x[j] = lo[j] > -1e9 ? lo[j] : std::min(hi[j] - 1.0, 0.0);
      }
      // Random trees may contain logically empty leaves; only feasible boxes
      // are checked.
      if (feasible) EXPECT_EQ(tree.assign_leaf(x), leaf);
    }
  }
}

TEST(Tree, ValidateRejectsCyclesAndBadIndices) {
  auto tree = two_level_tree();
  EXPECT_NO_THROW(tree.validate());
  auto bad = tree;
  bad.nodes[1].left = 0;
  EXPECT_THROW(bad.validate(), InputError);
  bad = tree;
  bad.nodes[2].treatment = 7;
  EXPECT_THROW(bad.validate(), InputError);
  bad = tree;
  bad.nodes[0].feature = 9;
  EXPECT_THROW(bad.validate(), InputError);
  bad = tree;
  bad.nodes[1].right = 2;  // node 2 shared, node 3 orphaned
  EXPECT_THROW(bad.validate(), InputError);
}

TEST(Tree, DepthAndCounts) {
  auto tree = two_level_tree();
  EXPECT_EQ(tree.depth(), 2);
  EXPECT_EQ(tree.num_branches(), 2u);
  EXPECT_EQ(tree.num_leaves(), 3u);
}

TEST(TreatmentSpace, DiscreteValidation) {
  EXPECT_THROW(TreatmentSpace::discrete(std::vector<std::string>{"a"}), ConfigError);
  EXPECT_THROW(TreatmentSpace::discrete(std::vector<std::string>{"a", "a"}), ConfigError);
  auto s = TreatmentSpace::discrete(3);
  EXPECT_EQ(s.num_candidates(), 3u);
  EXPECT_EQ(s.candidate_labels(), (std::vector<std::string>{"0", "1", "2"}));
}

TEST(TreatmentSpace, ContinuousEnumeratesCrossProduct) {
  auto s = TreatmentSpace::continuous(
      {{"t1", -4, 4, even_grid(-4, 4, 6)}, {"t2", -4, 4, even_grid(-4, 4, 6)}});
  EXPECT_EQ(s.num_candidates(), 36u);
  EXPECT_EQ(s.candidate_doses(0), (std::vector<double>{-4.0, -4.0}));
  EXPECT_EQ(s.candidate_doses(1), (std::vector<double>{-4.0, -2.4}));
  EXPECT_EQ(s.candidate_doses(35), (std::vector<double>{4.0, 4.0}));
  EXPECT_EQ(s.candidate_labels()[6], "t1=-2.4|t2=-4");
  EXPECT_THROW(TreatmentSpace::continuous({{"t", 0, 1, {0.5, 2.0}}}), ConfigError);
  EXPECT_THROW(TreatmentSpace::continuous({{"t", 0, 1, {0.5, 0.2}}}), ConfigError);
}

TEST(Dataset, InvariantsEnforced) {
  MatrixD x{{1.0}, {2.0}};
  EXPECT_NO_THROW(Dataset::discrete(x, {1.0, 2.0}, {0, 1}, 2));
  EXPECT_THROW(Dataset::discrete(x, {1.0}, {0, 1}, 2), InputError);
  EXPECT_THROW(Dataset::discrete(x, {1.0, NAN}, {0, 1}, 2), InputError);
  EXPECT_THROW(Dataset::discrete(x, {1.0, 2.0}, {0, 2}, 2), InputError);
  EXPECT_THROW(Dataset::discrete(MatrixD{{1.0}, {INFINITY}}, {1.0, 2.0}, {0, 1}, 2), InputError);
  EXPECT_THROW(Dataset::continuous(x, {1.0, 2.0}, MatrixD{{1.0}}), InputError);
}

TEST(RewardMatrix, Invariants) {
  EXPECT_THROW(RewardMatrix(MatrixD{{1.0}}, {"a"}), InputError);
  EXPECT_THROW(RewardMatrix(MatrixD{{1.0, NAN}}, {"a", "b"}), InputError);
  EXPECT_THROW(RewardMatrix(MatrixD{{1.0, 2.0}}, {"a"}), InputError);
  RewardMatrix r(MatrixD{{1.0, -2.0}}, {"a", "b"});
  EXPECT_EQ(r.negated().values, (MatrixD{{-1.0, 2.0}}));
}

TEST(Hyperparameters, Bounds) {
  Hyperparameters hp;
  EXPECT_NO_THROW(hp.validate());
  hp.min_leaf = 0;
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = {};
  hp.alpha = -1;
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = {};
  hp.max_depth = -1;
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = {};
  hp.restarts = 0;
  EXPECT_THROW(hp.validate(), ConfigError);
}

TEST(Thresholds, MidpointStrictlyBetween) {
  EXPECT_EQ(split_threshold(1.0, 2.0), 1.5);
  const double a = 1.0;
  const double b = std::nextafter(1.0, 2.0);
  const double t = split_threshold(a, b);
  EXPECT_GT(t, a);
  EXPECT_LE(t, b);
}
