#pragma once

#include <random>
#include <string>
#include <vector>

#include "optpolicy/optpolicy.hpp"

namespace testutil {

using namespace optpolicy;

inline MatrixD random_matrix(std::size_t n, std::size_t p, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatrixD m(n, p);
  for (double& v : m.data()) v = u(rng);
  return m;
}

// Features on a small integer lattice so that ties and repeated values occur.
inline MatrixD lattice_features(std::size_t n, std::size_t p, Rng& rng, int levels = 5) {
  std::uniform_int_distribution<int> u(0, levels - 1);
  MatrixD m(n, p);
  for (double& v : m.data()) v = u(rng);
  return m;
}

inline RewardMatrix random_rewards(std::size_t n, std::size_t t, Rng& rng) {
  return RewardMatrix(random_matrix(n, t, rng, -1.0, 1.0), TreatmentSpace::discrete(t).candidate_labels());
}

inline void grow(PolicyTree& tree, std::size_t id, int depth, int max_depth, Rng& rng) {
  std::bernoulli_distribution split(0.7);
  if (depth >= max_depth || !split(rng)) {
    std::uniform_int_distribution<std::size_t> t(0, tree.num_treatments() - 1);
    tree.nodes[id] = Node::make_leaf(t(rng), 1);
    return;
  }
  std::uniform_int_distribution<std::size_t> f(0, tree.num_features - 1);
  std::uniform_real_distribution<double> thr(-1.0, 1.0);
  const std::size_t feature = f(rng);
  const double threshold = thr(rng);
  const std::size_t left = tree.nodes.size();
  tree.nodes.emplace_back();
  grow(tree, left, depth + 1, max_depth, rng);
  const std::size_t right = tree.nodes.size();
  tree.nodes.emplace_back();
  grow(tree, right, depth + 1, max_depth, rng);
  tree.nodes[id] = Node::make_branch(feature, threshold, left, right);
}

// Random valid tree with nodes in preorder.
inline PolicyTree random_tree(std::size_t p, std::size_t t, int max_depth, Rng& rng) {
  PolicyTree tree;
  tree.num_features = p;
  tree.feature_names = Dataset::default_names(p);
  tree.treatment_labels = TreatmentSpace::discrete(t).candidate_labels();
  tree.nodes.emplace_back();
  grow(tree, 0, 0, max_depth, rng);
  return tree;
}

// Root split on x1 at 0, left child split on x2 at 0.
inline PolicyTree two_level_tree() {
  PolicyTree tree;
  tree.num_features = 2;
  tree.feature_names = {"x1", "x2"};
  tree.treatment_labels = {"A", "B", "C"};
  tree.nodes = {Node::make_branch(0, 0.0, 1, 4), Node::make_branch(1, 0.0, 2, 3), Node::make_leaf(0, 3),
                Node::make_leaf(1, 2), Node::make_leaf(2, 5)};
  return tree;
}

// Checkerboard rewards on two uniform features: treatment 0 is free when the
// signs of x1 and x2 agree, treatment 1 otherwise.
struct XorInstance {
  MatrixD features;
  RewardMatrix rewards;
};

inline XorInstance xor_instance(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MatrixD x(n, 2);
  MatrixD g(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    x(i, 1) = u(rng);
    const bool same = (x(i, 0) < 0) == (x(i, 1) < 0);
    g(i, 0) = same ? 0.0 : 1.0;
    g(i, 1) = same ? 1.0 : 0.0;
  }
  return {x, RewardMatrix(g, {"0", "1"})};
}

}  // namespace testutil
