#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "optpolicy/core_model.hpp"
#include "optpolicy/parallel.hpp"
#include "optpolicy/random.hpp"

namespace optpolicy {

struct LeafChoice {
  std::size_t treatment = 0;
  double cost = 0.0;
};

// argmin_t sum_{i in rows} rewards(i, t); ties go to the lowest index.
inline LeafChoice leaf_best_treatment(std::span<const std::size_t> rows, const RewardMatrix& rewards) {
  if (rows.empty()) throw InternalError("leaf_best_treatment called with an empty row set");
  std::vector<double> sums(rewards.num_treatments(), 0.0);
  for (std::size_t i : rows) {
    auto r = rewards.values.row(i);
    for (std::size_t t = 0; t < sums.size(); ++t) sums[t] += r[t];
  }
  LeafChoice best{0, sums[0]};
  for (std::size_t t = 1; t < sums.size(); ++t) {
    if (sums[t] < best.cost) best = {t, sums[t]};
  }
  return best;
}

enum class TreeMethod { kGreedy, kOptimal, kExhaustive };

inline const char* method_name(TreeMethod m) {
  switch (m) {
    case TreeMethod::kGreedy: return "greedy";
    case TreeMethod::kOptimal: return "optimal";
    case TreeMethod::kExhaustive: return "exhaustive";
  }
  return "?";
}

// Objective trajectory of one coordinate-descent restart. objectives[0] is
// the penalized objective of the initial tree; each later entry follows one
// accepted move.
struct RestartTrace {
  std::size_t restart = 0;
  std::string init;  // "fit_greedy", "greedy_full" or "random"
  std::vector<double> objectives;
  std::size_t sweeps = 0;
};

struct OptimalFit {
  PolicyTree tree;
  double penalized_objective = 0.0;
  std::size_t best_restart = 0;
  std::vector<RestartTrace> traces;
};

namespace detail {

constexpr std::size_t kMaxSweeps = 10000;

// Shared read-only view of one training problem. Costs inside the search are
// raw sums; the penalty per branch is alpha * n so that raw / n is the
// mean-normalized penalized objective.
struct Problem {
  const MatrixD& gamma;
  const MatrixD& x;
  std::size_t n;
  std::size_t p;
  std::size_t t_count;
  std::size_t min_leaf;
  int max_depth;
  double alpha_raw;
  double tol;

  Problem(const RewardMatrix& rewards, const MatrixD& features, const Hyperparameters& hp)
      : gamma(rewards.values),
        x(features),
        n(features.rows()),
        p(features.cols()),
        t_count(rewards.num_treatments()),
        min_leaf(hp.min_leaf),
        max_depth(hp.max_depth),
        alpha_raw(hp.alpha * static_cast<double>(features.rows())),
        tol(0.0) {
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = 0.0;
      for (double v : gamma.row(i)) m = std::max(m, std::abs(v));
      scale += m;
    }
    tol = 1e-11 * std::max(scale, 1e-300);
  }
};

inline void validate_problem(const RewardMatrix& rewards, const MatrixD& features, const Hyperparameters& hp) {
  hp.validate();
  rewards.validate();
  if (rewards.rows() != features.rows()) {
    throw InputError("reward rows " + std::to_string(rewards.rows()) + " do not match feature rows " +
                     std::to_string(features.rows()));
  }
  if (features.cols() == 0) throw InputError("features matrix has no columns");
  require_finite(features, "features");
  if (features.rows() < hp.min_leaf) {
    throw InputError("need at least min_leaf=" + std::to_string(hp.min_leaf) + " rows, got " +
                     std::to_string(features.rows()));
  }
}

inline double min_entry(std::span<const double> v, std::size_t* arg = nullptr) {
  std::size_t best = 0;
  for (std::size_t t = 1; t < v.size(); ++t) {
    if (v[t] < v[best]) best = t;
  }
  if (arg) *arg = best;
  return v[best];
}

inline void add_row(std::span<double> sums, std::span<const double> row) {
  for (std::size_t t = 0; t < sums.size(); ++t) sums[t] += row[t];
}
inline void sub_row(std::span<double> sums, std::span<const double> row) {
  for (std::size_t t = 0; t < sums.size(); ++t) sums[t] -= row[t];
}

struct SortedRows {
  std::vector<std::pair<double, std::size_t>> items;

  void fill(const Problem& pr, std::span<const std::size_t> rows, std::size_t feature) {
    items.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) items[k] = {pr.x(rows[k], feature), rows[k]};
    std::sort(items.begin(), items.end());
  }
};

struct SplitCandidate {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double cost = std::numeric_limits<double>::infinity();
};

// Best split of `rows` into two leaves, scored exactly by the leaf argmin on
// each side. Ties keep the first candidate in (feature, threshold) order.
inline SplitCandidate best_leaf_split(const Problem& pr, std::span<const std::size_t> rows, SortedRows& sorted) {
  SplitCandidate best;
  const std::size_t m = rows.size();
  if (m < 2 * pr.min_leaf) return best;
  std::vector<double> total(pr.t_count, 0.0);
  for (std::size_t i : rows) add_row(total, pr.gamma.row(i));
  std::vector<double> left(pr.t_count);
  std::vector<double> right(pr.t_count);
  for (std::size_t f = 0; f < pr.p; ++f) {
    sorted.fill(pr, rows, f);
    const auto& it = sorted.items;
    if (it.front().first == it.back().first) continue;
    std::fill(left.begin(), left.end(), 0.0);
    for (std::size_t k = 1; k < m; ++k) {
      add_row(left, pr.gamma.row(it[k - 1].second));
      if (k < pr.min_leaf || m - k < pr.min_leaf) continue;
      if (!(it[k - 1].first < it[k].first)) continue;
      for (std::size_t t = 0; t < pr.t_count; ++t) right[t] = total[t] - left[t];
      const double cost = min_entry(left) + min_entry(right);
      if (cost < best.cost - pr.tol) best = {true, f, split_threshold(it[k - 1].first, it[k].first), cost};
    }
  }
  return best;
}

// Mutable tree used during search. Dead slots are recycled.
struct SearchNode {
  bool alive = true;
  bool leaf = true;
  std::size_t feature = 0;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
};

struct SearchTree {
  std::vector<SearchNode> nodes;
  std::vector<int> free_ids;

  static SearchTree single_leaf() {
    SearchTree t;
    t.nodes.push_back(SearchNode{});
    return t;
  }

  int new_node(int parent, int depth) {
    SearchNode node;
    node.parent = parent;
    node.depth = depth;
    if (!free_ids.empty()) {
      int id = free_ids.back();
      free_ids.pop_back();
      nodes[static_cast<std::size_t>(id)] = node;
      return id;
    }
    nodes.push_back(node);
    return static_cast<int>(nodes.size() - 1);
  }

  SearchNode& at(int id) { return nodes[static_cast<std::size_t>(id)]; }
  const SearchNode& at(int id) const { return nodes[static_cast<std::size_t>(id)]; }

  void release(int id) {
    SearchNode& node = at(id);
    if (!node.leaf) {
      release(node.left);
      release(node.right);
    }
    node.alive = false;
    free_ids.push_back(id);
  }

  void collapse(int id) {
    SearchNode& node = at(id);
    if (node.leaf) return;
    int l = node.left;
    int r = node.right;
    release(l);
    release(r);
    SearchNode& again = at(id);
    again.leaf = true;
    again.left = again.right = -1;
  }

  // Replaces the subtree at `id` with a copy of the subtree at `src` of `from`.
  void graft(int id, const SearchTree& from, int src) {
    collapse(id);
    const SearchNode& s = from.at(src);
    if (s.leaf) return;
    split(id, s.feature, s.threshold);
    const int l = at(id).left;
    const int r = at(id).right;
    graft(l, from, s.left);
    graft(r, from, s.right);
  }

  void split(int id, std::size_t feature, double threshold) {
    if (!at(id).leaf) collapse(id);
    int depth = at(id).depth;
    int l = new_node(id, depth + 1);
    int r = new_node(id, depth + 1);
    SearchNode& node = at(id);
    node.leaf = false;
    node.feature = feature;
    node.threshold = threshold;
    node.left = l;
    node.right = r;
  }

  int route_from(int id, std::span<const double> x) const {
    while (!at(id).leaf) {
      const SearchNode& node = at(id);
      id = x[node.feature] < node.threshold ? node.left : node.right;
    }
    return id;
  }

  std::vector<int> preorder(int root = 0) const {
    std::vector<int> out;
    std::vector<int> stack{root};
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      out.push_back(id);
      if (!at(id).leaf) {
        stack.push_back(at(id).right);
        stack.push_back(at(id).left);
      }
    }
    return out;
  }
};

struct Evaluation {
  double raw = 0.0;  // leaf costs + alpha_raw * branches
  bool feasible = true;
};

// Full from-scratch evaluation of a tree with argmin leaves.
inline Evaluation evaluate(const Problem& pr, const SearchTree& tree) {
  std::vector<double> sums(tree.nodes.size() * pr.t_count, 0.0);
  std::vector<std::size_t> counts(tree.nodes.size(), 0);
  for (std::size_t i = 0; i < pr.n; ++i) {
    auto leaf = static_cast<std::size_t>(tree.route_from(0, pr.x.row(i)));
    add_row({sums.data() + leaf * pr.t_count, pr.t_count}, pr.gamma.row(i));
    ++counts[leaf];
  }
  Evaluation ev;
  for (int id : tree.preorder()) {
    const auto& node = tree.at(id);
    if (!node.leaf) {
      ev.raw += pr.alpha_raw;
      continue;
    }
    auto u = static_cast<std::size_t>(id);
    if (counts[u] < pr.min_leaf) ev.feasible = false;
    ev.raw += min_entry({sums.data() + u * pr.t_count, pr.t_count});
  }
  return ev;
}

// Search state: tree plus per-node row lists and cached subtree costs.
class SearchState {
 public:
  SearchState(const Problem& pr, SearchTree tree) : pr_(&pr), tree_(std::move(tree)) { rebuild(); }

  const SearchTree& tree() const { return tree_; }
  double raw_objective() const { return raw_; }
  double objective() const { return raw_ / static_cast<double>(pr_->n); }
  const std::vector<std::size_t>& rows(int id) const { return rows_[static_cast<std::size_t>(id)]; }
  double subtree_cost(int id) const { return subtree_cost_[static_cast<std::size_t>(id)]; }
  std::size_t subtree_branches(int id) const { return subtree_branches_[static_cast<std::size_t>(id)]; }
  std::span<const double> leaf_sums(int id) const {
    return {leaf_sums_.data() + static_cast<std::size_t>(id) * pr_->t_count, pr_->t_count};
  }

  void replace_tree(SearchTree tree) {
    tree_ = std::move(tree);
    rebuild();
  }

  // Recomputes every cache from scratch.
  void rebuild() {
    const Problem& pr = *pr_;
    const std::size_t size = tree_.nodes.size();
    rows_.assign(size, {});
    leaf_sums_.assign(size * pr.t_count, 0.0);
    subtree_cost_.assign(size, 0.0);
    subtree_branches_.assign(size, 0);
    for (std::size_t i = 0; i < pr.n; ++i) {
      int id = 0;
      auto x = pr.x.row(i);
      while (true) {
        rows_[static_cast<std::size_t>(id)].push_back(i);
        const auto& node = tree_.at(id);
        if (node.leaf) break;
        id = x[node.feature] < node.threshold ? node.left : node.right;
      }
      add_row({leaf_sums_.data() + static_cast<std::size_t>(id) * pr.t_count, pr.t_count}, pr.gamma.row(i));
    }
    auto order = tree_.preorder();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      auto u = static_cast<std::size_t>(*it);
      const auto& node = tree_.at(*it);
      if (node.leaf) {
        subtree_cost_[u] = min_entry(leaf_sums(*it));
      } else {
        auto l = static_cast<std::size_t>(node.left);
        auto r = static_cast<std::size_t>(node.right);
        subtree_cost_[u] = subtree_cost_[l] + subtree_cost_[r];
        subtree_branches_[u] = 1 + subtree_branches_[l] + subtree_branches_[r];
      }
    }
    raw_ = subtree_cost_[0] + pr.alpha_raw * static_cast<double>(subtree_branches_[0]);
  }

  // Cached leaf sums agree with a direct recomputation and the leaf row
  // lists partition all rows.
  bool verify() const {
    const Problem& pr = *pr_;
    std::vector<char> seen(pr.n, 0);
    for (int id : tree_.preorder()) {
      if (!tree_.at(id).leaf) continue;
      std::vector<double> sums(pr.t_count, 0.0);
      for (std::size_t i : rows(id)) {
        if (seen[i]) return false;
        seen[i] = 1;
        add_row(sums, pr.gamma.row(i));
      }
      auto cached = leaf_sums(id);
      for (std::size_t t = 0; t < pr.t_count; ++t) {
        if (std::abs(sums[t] - cached[t]) > 1e-9 * (1.0 + std::abs(sums[t]))) return false;
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  }

 private:
  const Problem* pr_;
  SearchTree tree_;
  std::vector<std::vector<std::size_t>> rows_;
  std::vector<double> leaf_sums_;
  std::vector<double> subtree_cost_;
  std::vector<std::size_t> subtree_branches_;
  double raw_ = 0.0;
};

// Best replacement split at branch `id`, keeping both child subtrees. Every
// candidate is scored exactly: rows move one at a time from the right
// subtree to the left one and only the two affected leaves are re-solved.
inline SplitCandidate best_replacement_split(const Problem& pr, const SearchState& state, int id, SortedRows& sorted) {
  SplitCandidate best;
  const SearchTree& tree = state.tree();
  const auto& node = tree.at(id);
  const auto& rows = state.rows(id);
  const std::size_t m = rows.size();
  if (m < 2) return best;

  std::vector<int> local(tree.nodes.size(), -1);
  std::size_t num_leaves = 0;
  for (int child : {node.left, node.right}) {
    for (int u : tree.preorder(child)) {
      if (tree.at(u).leaf) local[static_cast<std::size_t>(u)] = static_cast<int>(num_leaves++);
    }
  }
  // Leaf reached by each row of this node when sent left or right.
  std::vector<std::size_t> via_left(pr.n);
  std::vector<std::size_t> via_right(pr.n);
  for (std::size_t i : rows) {
    auto x = pr.x.row(i);
    via_left[i] = static_cast<std::size_t>(local[static_cast<std::size_t>(tree.route_from(node.left, x))]);
    via_right[i] = static_cast<std::size_t>(local[static_cast<std::size_t>(tree.route_from(node.right, x))]);
  }

  const std::size_t T = pr.t_count;
  std::vector<double> init_sums(num_leaves * T, 0.0);
  std::vector<std::size_t> init_counts(num_leaves, 0);
  for (std::size_t i : rows) {
    add_row({init_sums.data() + via_right[i] * T, T}, pr.gamma.row(i));
    ++init_counts[via_right[i]];
  }
  std::vector<double> init_mins(num_leaves);
  double init_total = 0.0;
  std::size_t init_violations = 0;
  for (std::size_t l = 0; l < num_leaves; ++l) {
    init_mins[l] = min_entry({init_sums.data() + l * T, T});
    init_total += init_mins[l];
    if (init_counts[l] < pr.min_leaf) ++init_violations;
  }

  std::vector<double> sums;
  std::vector<std::size_t> counts;
  std::vector<double> mins;
  for (std::size_t f = 0; f < pr.p; ++f) {
    sorted.fill(pr, rows, f);
    const auto& it = sorted.items;
    if (it.front().first == it.back().first) continue;
    sums = init_sums;
    counts = init_counts;
    mins = init_mins;
    double total = init_total;
    std::size_t violations = init_violations;
    auto update = [&](std::size_t leaf, std::span<const double> g, bool add) {
      std::span<double> s{sums.data() + leaf * T, T};
      const bool was_bad = counts[leaf] < pr.min_leaf;
      if (add) {
        add_row(s, g);
        ++counts[leaf];
      } else {
        sub_row(s, g);
        --counts[leaf];
      }
      const bool is_bad = counts[leaf] < pr.min_leaf;
      if (was_bad != is_bad) {
        if (is_bad) {
          ++violations;
        } else {
          --violations;
        }
      }
      const double mn = min_entry(s);
      total += mn - mins[leaf];
      mins[leaf] = mn;
    };
    for (std::size_t k = 1; k < m; ++k) {
      std::size_t i = it[k - 1].second;
      auto g = pr.gamma.row(i);
      update(via_right[i], g, false);
      update(via_left[i], g, true);
      if (violations != 0 || !(it[k - 1].first < it[k].first)) continue;
      if (total < best.cost - pr.tol) best = {true, f, split_threshold(it[k - 1].first, it[k].first), total};
    }
  }
  return best;
}

// Leaf cost of sending `rows` through the subtree rooted at `id`.
inline double cost_through(const Problem& pr, const SearchTree& tree, int id, std::span<const std::size_t> rows) {
  std::vector<double> sums(tree.nodes.size() * pr.t_count, 0.0);
  std::vector<char> used(tree.nodes.size(), 0);
  for (std::size_t i : rows) {
    auto leaf = static_cast<std::size_t>(tree.route_from(id, pr.x.row(i)));
    add_row({sums.data() + leaf * pr.t_count, pr.t_count}, pr.gamma.row(i));
    used[leaf] = 1;
  }
  double total = 0.0;
  for (std::size_t u = 0; u < used.size(); ++u) {
    if (used[u]) total += min_entry({sums.data() + u * pr.t_count, pr.t_count});
  }
  return total;
}

// Greedy top-down growth into an existing leaf. With `full` set, splits are
// taken whenever feasible regardless of gain (used to seed restarts);
// otherwise a split needs a gain above the per-branch penalty.
inline void grow_greedy(const Problem& pr, SearchTree& tree, int id, std::vector<std::size_t> rows, bool full,
                        SortedRows& sorted) {
  if (tree.at(id).depth >= pr.max_depth || rows.size() < 2 * pr.min_leaf) return;
  SplitCandidate split = best_leaf_split(pr, rows, sorted);
  if (!split.found) return;
  if (!full) {
    double leaf = 0.0;
    std::vector<double> sums(pr.t_count, 0.0);
    for (std::size_t i : rows) add_row(sums, pr.gamma.row(i));
    leaf = min_entry(sums);
    if (!(leaf - split.cost > pr.alpha_raw + pr.tol)) return;
  }
  tree.split(id, split.feature, split.threshold);
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
  for (std::size_t i : rows) (pr.x(i, split.feature) < split.threshold ? left : right).push_back(i);
  rows.clear();
  rows.shrink_to_fit();
  int l = tree.at(id).left;
  int r = tree.at(id).right;
  grow_greedy(pr, tree, l, std::move(left), full, sorted);
  grow_greedy(pr, tree, r, std::move(right), full, sorted);
}

// Greedy growth at leaf `id` down to the depth limit, then bottom-up removal of
// branches that do not pay for their penalty. Returns leaf costs plus
// penalties of the resulting subtree.
inline double grow_pruned(const Problem& pr, SearchTree& tree, int id, const std::vector<std::size_t>& rows,
                          SortedRows& sorted) {
  std::vector<double> sums(pr.t_count, 0.0);
  for (std::size_t i : rows) add_row(sums, pr.gamma.row(i));
  const double leaf = min_entry(sums);
  if (tree.at(id).depth >= pr.max_depth || rows.size() < 2 * pr.min_leaf) return leaf;
  SplitCandidate split = best_leaf_split(pr, rows, sorted);
  if (!split.found) return leaf;
  tree.split(id, split.feature, split.threshold);
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
  for (std::size_t i : rows) (pr.x(i, split.feature) < split.threshold ? left : right).push_back(i);
  const int l = tree.at(id).left;
  const int r = tree.at(id).right;
  const double cost = grow_pruned(pr, tree, l, left, sorted) + grow_pruned(pr, tree, r, right, sorted) + pr.alpha_raw;
  if (cost < leaf - pr.tol) return cost;
  tree.collapse(id);
  return leaf;
}

inline SearchTree greedy_tree(const Problem& pr, bool full) {
  SearchTree tree = SearchTree::single_leaf();
  std::vector<std::size_t> rows(pr.n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  SortedRows sorted;
  grow_greedy(pr, tree, 0, std::move(rows), full, sorted);
  return tree;
}

// Random tree of depth <= max_depth with random feasible splits.
// With `greedy_below` set only this node gets a random split and both
// children are grown greedily to full depth.
inline void grow_random(const Problem& pr, SearchTree& tree, int id, const std::vector<std::size_t>& rows, Rng& rng,
                        bool greedy_below = false) {
  const int depth = tree.at(id).depth;
  if (depth >= pr.max_depth || rows.size() < 2 * pr.min_leaf) return;
  std::bernoulli_distribution go(depth == 0 || greedy_below ? 1.0 : 0.75);
  if (!go(rng)) return;
  std::vector<std::size_t> features(pr.p);
  std::iota(features.begin(), features.end(), std::size_t{0});
  std::shuffle(features.begin(), features.end(), rng);
  std::vector<double> values(rows.size());
  for (std::size_t f : features) {
    for (std::size_t k = 0; k < rows.size(); ++k) values[k] = pr.x(rows[k], f);
    std::sort(values.begin(), values.end());
    std::vector<std::size_t> cuts;
    const std::size_t m = values.size();
    for (std::size_t k = pr.min_leaf; k + pr.min_leaf <= m; ++k) {
      if (values[k - 1] < values[k]) cuts.push_back(k);
    }
    if (cuts.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, cuts.size() - 1);
    std::size_t k = cuts[pick(rng)];
    double threshold = split_threshold(values[k - 1], values[k]);
    tree.split(id, f, threshold);
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (std::size_t i : rows) (pr.x(i, f) < threshold ? left : right).push_back(i);
    int l = tree.at(id).left;
    int r = tree.at(id).right;
    if (greedy_below) {
      SortedRows sorted;
      grow_greedy(pr, tree, l, std::move(left), true, sorted);
      grow_greedy(pr, tree, r, std::move(right), true, sorted);
    } else {
      grow_random(pr, tree, l, left, rng);
      grow_random(pr, tree, r, right, rng);
    }
    return;
  }
}

inline SearchTree random_tree(const Problem& pr, Rng& rng, bool greedy_below = false) {
  SearchTree tree = SearchTree::single_leaf();
  std::vector<std::size_t> rows(pr.n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  grow_random(pr, tree, 0, rows, rng, greedy_below);
  return tree;
}

// Coordinate descent from `init` until a full sweep changes nothing. At a
// branch the moves are: collapse to a leaf, promote either child subtree,
// swap in the best split above the existing children, or swap the whole
// subtree for its best stump. A leaf may be expanded into a stump. The best
// move is applied if it strictly lowers the penalized objective.
inline SearchState local_search(const Problem& pr, SearchTree init, Rng& rng, RestartTrace& trace) {
  SearchState state(pr, std::move(init));
  trace.objectives.push_back(state.objective());
  SortedRows sorted;
  for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
    ++trace.sweeps;
    bool changed = false;
    std::vector<int> order = state.tree().preorder();
    std::shuffle(order.begin(), order.end(), rng);
    for (int id : order) {
      const auto& node = state.tree().at(id);
      if (!node.alive) continue;
      const auto& rows = state.rows(id);
      if (rows.empty()) continue;
      const double current = state.subtree_cost(id);

      enum class Move { kNone, kReplace, kCollapse, kExpand, kStump, kPromote };
      Move move = Move::kNone;
      double best_delta = -pr.tol;
      SplitCandidate split;
      int promoted = -1;

      if (!node.leaf) {
        const double penalty = pr.alpha_raw * static_cast<double>(state.subtree_branches(id));
        std::vector<double> sums(pr.t_count, 0.0);
        for (std::size_t i : rows) add_row(sums, pr.gamma.row(i));
        const double collapse_delta = min_entry(sums) - current - penalty;
        if (collapse_delta < best_delta) {
          best_delta = collapse_delta;
          move = Move::kCollapse;
        }
        if (state.subtree_branches(id) > 1) {
          SplitCandidate stump = best_leaf_split(pr, rows, sorted);
          if (stump.found && stump.cost + pr.alpha_raw - current - penalty < best_delta) {
            best_delta = stump.cost + pr.alpha_raw - current - penalty;
            move = Move::kStump;
            split = stump;
          }
        }
        for (int child : {node.left, node.right}) {
          if (state.tree().at(child).leaf) continue;
          const double d = cost_through(pr, state.tree(), child, rows) +
                           pr.alpha_raw * static_cast<double>(state.subtree_branches(child)) - current - penalty;
          if (d < best_delta) {
            best_delta = d;
            move = Move::kPromote;
            promoted = child;
          }
        }
        SplitCandidate rep = best_replacement_split(pr, state, id, sorted);
        if (rep.found && rep.cost - current < best_delta &&
            (rep.feature != node.feature || rep.threshold != node.threshold)) {
          best_delta = rep.cost - current;
          move = Move::kReplace;
          split = rep;
        }
      } else if (node.depth < pr.max_depth) {
        SplitCandidate exp = best_leaf_split(pr, rows, sorted);
        if (exp.found && exp.cost + pr.alpha_raw - current < best_delta) {
          best_delta = exp.cost + pr.alpha_raw - current;
          move = Move::kExpand;
          split = exp;
        }
      }
      if (move == Move::kNone) continue;

      SearchTree candidate = state.tree();
      if (move == Move::kCollapse) {
        candidate.collapse(id);
      } else if (move == Move::kPromote) {
        candidate.graft(id, state.tree(), promoted);
      } else if (move == Move::kExpand || move == Move::kStump) {
        candidate.split(id, split.feature, split.threshold);
      } else if (move == Move::kReplace) {
        auto& n = candidate.at(id);
        n.feature = split.feature;
        n.threshold = split.threshold;
      }
      Evaluation ev = evaluate(pr, candidate);
      if (!ev.feasible || !(ev.raw < state.raw_objective() - pr.tol)) continue;
      state.replace_tree(std::move(candidate));
      trace.objectives.push_back(state.objective());
      changed = true;
    }
    if (!changed) break;
  }
  return state;
}

inline PolicyTree to_policy_tree(const Problem& pr, const SearchState& state, const RewardMatrix& rewards,
                                 const std::vector<std::string>& feature_names, const Hyperparameters& hp) {
  const SearchTree& st = state.tree();
  PolicyTree out;
  out.num_features = pr.p;
  out.feature_names = feature_names.empty() ? Dataset::default_names(pr.p) : feature_names;
  out.treatment_labels = rewards.labels;
  out.hyperparams = hp;
  auto order = st.preorder();
  std::vector<std::size_t> index(st.nodes.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) index[static_cast<std::size_t>(order[k])] = k;
  double leaf_total = 0.0;
  for (int id : order) {
    const auto& node = st.at(id);
    if (node.leaf) {
      std::size_t t = 0;
      leaf_total += min_entry(state.leaf_sums(id), &t);
      out.nodes.push_back(Node::make_leaf(t, state.rows(id).size()));
    } else {
      out.nodes.push_back(Node::make_branch(node.feature, node.threshold, index[static_cast<std::size_t>(node.left)],
                                            index[static_cast<std::size_t>(node.right)]));
    }
  }
  out.objective_train = leaf_total / static_cast<double>(pr.n);
  return out;
}

}  // namespace detail

inline PolicyTree fit_greedy(const RewardMatrix& rewards, const MatrixD& features, const Hyperparameters& hp,
                             const std::vector<std::string>& feature_names = {}) {
  detail::validate_problem(rewards, features, hp);
  detail::Problem pr(rewards, features, hp);
  detail::SearchState state(pr, detail::greedy_tree(pr, false));
  return detail::to_policy_tree(pr, state, rewards, feature_names, hp);
}

// Local-search coordinate descent with restarts. Restart 0 starts from the
// fit_greedy tree, so the result never scores worse than greedy, and
// restart 1 from the fully grown greedy tree. Later restarts start with equal
// probability from a random tree or from a random root split with greedy
// growth below it. Restarts run on up to `jobs` threads; the result depends only
// on the seed.
inline OptimalFit fit_optimal_traced(const RewardMatrix& rewards, const MatrixD& features, const Hyperparameters& hp,
                                     const std::vector<std::string>& feature_names = {}, std::size_t jobs = 1) {
  detail::validate_problem(rewards, features, hp);
  detail::Problem pr(rewards, features, hp);

  std::vector<detail::SearchTree> results(hp.restarts);
  std::vector<double> objectives(hp.restarts, 0.0);
  std::vector<RestartTrace> traces(hp.restarts);
  parallel_for(hp.restarts, jobs, [&](std::size_t r) {
    Rng rng = make_rng(hp.seed, {0x5ea4c4u, r});
    detail::SearchTree init;
    RestartTrace& trace = traces[r];
    trace.restart = r;
    if (r == 0) {
      init = detail::greedy_tree(pr, false);
      trace.init = "fit_greedy";
    } else if (r == 1) {
      init = detail::greedy_tree(pr, true);
      trace.init = "greedy_full";
    } else if (std::bernoulli_distribution(0.5)(rng)) {
      init = detail::random_tree(pr, rng, true);
      trace.init = "random_root";
    } else {
      init = detail::random_tree(pr, rng);
      trace.init = "random";
    }
    detail::SearchState state = detail::local_search(pr, std::move(init), rng, trace);
    objectives[r] = state.raw_objective();
    results[r] = state.tree();
  });

  std::size_t best = 0;
  for (std::size_t r = 1; r < hp.restarts; ++r) {
    if (objectives[r] < objectives[best]) best = r;
  }
  detail::SearchState state(pr, results[best]);
  OptimalFit fit;
  fit.tree = detail::to_policy_tree(pr, state, rewards, feature_names, hp);
  fit.penalized_objective = state.objective();
  fit.best_restart = best;
  fit.traces = std::move(traces);
  return fit;
}

inline PolicyTree fit_optimal(const RewardMatrix& rewards, const MatrixD& features, const Hyperparameters& hp,
                              const std::vector<std::string>& feature_names = {}, std::size_t jobs = 1) {
  return fit_optimal_traced(rewards, features, hp, feature_names, jobs).tree;
}

inline constexpr std::size_t kExhaustiveCandidateLimit = 10000;

namespace detail {

struct SubtreeSolution {
  double raw = 0.0;  // leaf costs + alpha_raw per branch
  bool split = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  std::unique_ptr<SubtreeSolution> left;
  std::unique_ptr<SubtreeSolution> right;
};

// Exact optimum over all subtrees of depth <= depth_left on `rows`. The
// objective is separable in the children, so each child is solved
// independently for every candidate split. A split replaces the leaf only
// when strictly better.
inline SubtreeSolution solve_exhaustive(const Problem& pr, std::span<const std::size_t> rows, int depth_left) {
  SubtreeSolution best;
  std::vector<double> sums(pr.t_count, 0.0);
  for (std::size_t i : rows) add_row(sums, pr.gamma.row(i));
  best.raw = min_entry(sums);
  if (depth_left <= 0 || rows.size() < 2 * pr.min_leaf) return best;

  SortedRows sorted;
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
  for (std::size_t f = 0; f < pr.p; ++f) {
    sorted.fill(pr, rows, f);
    const auto& items = sorted.items;
    const std::size_t m = items.size();
    for (std::size_t k = pr.min_leaf; k + pr.min_leaf <= m; ++k) {
      if (!(items[k - 1].first < items[k].first)) continue;
      left.clear();
      right.clear();
      for (std::size_t q = 0; q < m; ++q) (q < k ? left : right).push_back(items[q].second);
      SubtreeSolution l = solve_exhaustive(pr, left, depth_left - 1);
      SubtreeSolution r = solve_exhaustive(pr, right, depth_left - 1);
      const double raw = l.raw + r.raw + pr.alpha_raw;
      if (raw < best.raw - pr.tol) {
        best.raw = raw;
        best.split = true;
        best.feature = f;
        best.threshold = split_threshold(items[k - 1].first, items[k].first);
        best.left = std::make_unique<SubtreeSolution>(std::move(l));
        best.right = std::make_unique<SubtreeSolution>(std::move(r));
      }
    }
  }
  return best;
}

inline void materialize(const SubtreeSolution& sol, SearchTree& tree, int id) {
  if (!sol.split) return;
  tree.split(id, sol.feature, sol.threshold);
  int l = tree.at(id).left;
  int r = tree.at(id).right;
  materialize(*sol.left, tree, l);
  materialize(*sol.right, tree, r);
}

}  // namespace detail

// Exhaustive search over every tree of depth <= 2 with per-node midpoint
// thresholds. Small-instance oracle; refuses when the root has more than
// kExhaustiveCandidateLimit candidate splits.
inline PolicyTree fit_exhaustive(const RewardMatrix& rewards, const MatrixD& features, const Hyperparameters& hp,
                                 const std::vector<std::string>& feature_names = {}) {
  detail::validate_problem(rewards, features, hp);
  if (hp.max_depth > 2) throw ConfigError("fit_exhaustive supports max_depth <= 2");
  std::size_t candidates = 0;
  for (std::size_t f = 0; f < features.cols(); ++f) {
    auto col = features.column(f);
    std::sort(col.begin(), col.end());
    candidates += static_cast<std::size_t>(std::unique(col.begin(), col.end()) - col.begin()) - 1;
  }
  if (candidates > kExhaustiveCandidateLimit) {
    throw ConfigError("fit_exhaustive: " + std::to_string(candidates) + " candidate splits exceed the limit of " +
                      std::to_string(kExhaustiveCandidateLimit));
  }
  detail::Problem pr(rewards, features, hp);
  std::vector<std::size_t> rows(pr.n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  detail::SubtreeSolution sol = detail::solve_exhaustive(pr, rows, hp.max_depth);
  detail::SearchTree tree = detail::SearchTree::single_leaf();
  detail::materialize(sol, tree, 0);
  detail::SearchState state(pr, std::move(tree));
  return detail::to_policy_tree(pr, state, rewards, feature_names, hp);
}

inline PolicyTree fit_tree(TreeMethod method, const RewardMatrix& rewards, const MatrixD& features,
                           const Hyperparameters& hp, const std::vector<std::string>& feature_names = {},
                           std::size_t jobs = 1) {
  switch (method) {
    case TreeMethod::kGreedy: return fit_greedy(rewards, features, hp, feature_names);
    case TreeMethod::kOptimal: return fit_optimal(rewards, features, hp, feature_names, jobs);
    case TreeMethod::kExhaustive: return fit_exhaustive(rewards, features, hp, feature_names);
  }
  throw InternalError("unknown tree method");
}

// ---------------------------------------------------------------------------
// Hyperparameter tuning on a held-out validation split.

struct TuneGrid {
  std::vector<int> depths{1, 2, 3, 4, 5};
  std::vector<double> alphas{0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  double validation_fraction = 0.3;
  std::size_t min_leaf = 1;
  std::size_t restarts = 100;
  // Validation scores within this many standard errors of the best score
  // count as ties, which are resolved toward the smaller tree.
  double se_tolerance = 1.0;

  void validate() const {
    if (depths.empty() || alphas.empty()) throw ConfigError("tuning grid must have at least one depth and one alpha");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation_fraction must lie in (0, 1)");
    }
    if (min_leaf < 1 || restarts < 1) throw ConfigError("min_leaf and restarts must be >= 1");
    if (!(se_tolerance >= 0.0)) throw ConfigError("se_tolerance must be >= 0");
    for (int d : depths) {
      if (d < 0) throw ConfigError("tuning depths must be >= 0");
    }
    for (double a : alphas) {
      if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("tuning alphas must be finite and >= 0");
    }
  }
};

struct TuneCell {
  int depth = 0;
  double alpha = 0.0;
  double validation_score = 0.0;
  double validation_se = 0.0;
  std::size_t branches = 0;
};

struct TuneResult {
  Hyperparameters hp;
  PolicyTree tree;
  std::vector<TuneCell> cells;
  std::size_t selected = 0;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
};

inline TuneResult tune(const RewardMatrix& rewards, const MatrixD& features, const TuneGrid& grid, std::uint64_t seed,
                       TreeMethod method = TreeMethod::kOptimal, const std::vector<std::string>& feature_names = {},
                       std::size_t jobs = 1) {
  grid.validate();
  const std::size_t n = features.rows();
  if (rewards.rows() != n) throw InputError("reward rows do not match feature rows");
  std::size_t n_val = static_cast<std::size_t>(std::llround(grid.validation_fraction * static_cast<double>(n)));
  if (n_val < grid.min_leaf || n - n_val < grid.min_leaf || n_val == 0 || n_val == n) {
    throw InputError("validation split of " + std::to_string(n) + " rows leaves fewer than min_leaf=" +
                     std::to_string(grid.min_leaf) + " rows on one side");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, {0x7a1du});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  const RewardMatrix train_r = rewards.select_rows(train_idx);
  const RewardMatrix val_r = rewards.select_rows(val_idx);
  const MatrixD train_x = features.select_rows(train_idx);
  const MatrixD val_x = features.select_rows(val_idx);

  TuneResult result;
  result.train_rows = train_idx.size();
  result.validation_rows = val_idx.size();
  for (int d : grid.depths) {
    for (double a : grid.alphas) result.cells.push_back({d, a, 0.0, 0.0, 0});
  }
  auto make_hp = [&](int depth, double alpha) {
    Hyperparameters hp;
    hp.max_depth = depth;
    hp.alpha = alpha;
    hp.min_leaf = grid.min_leaf;
    hp.restarts = grid.restarts;
    hp.seed = seed;
    return hp;
  };
  parallel_for(result.cells.size(), jobs, [&](std::size_t c) {
    TuneCell& cell = result.cells[c];
    PolicyTree tree = fit_tree(method, train_r, train_x, make_hp(cell.depth, cell.alpha), feature_names);
    auto z = tree.prescribe(val_x);
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      double v = val_r.values(i, z[i]);
      sum += v;
      sq += v * v;
    }
    const double m = static_cast<double>(z.size());
    cell.validation_score = sum / m;
    const double var = m > 1 ? std::max(0.0, (sq - sum * sum / m) / (m - 1)) : 0.0;
    cell.validation_se = std::sqrt(var / m);
    cell.branches = tree.num_branches();
  });

  std::size_t best = 0;
  for (std::size_t c = 1; c < result.cells.size(); ++c) {
    if (result.cells[c].validation_score < result.cells[best].validation_score) best = c;
  }
  const double cutoff = result.cells[best].validation_score + grid.se_tolerance * result.cells[best].validation_se;
  auto smaller = [](const TuneCell& a, const TuneCell& b) {
    if (a.branches != b.branches) return a.branches < b.branches;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.alpha > b.alpha;
  };
  std::size_t chosen = best;
  for (std::size_t c = 0; c < result.cells.size(); ++c) {
    if (result.cells[c].validation_score <= cutoff && smaller(result.cells[c], result.cells[chosen])) chosen = c;
  }
  result.selected = chosen;
  result.hp = make_hp(result.cells[chosen].depth, result.cells[chosen].alpha);
  result.tree = fit_tree(method, rewards, features, result.hp, feature_names);
  return result;
}

}  // namespace optpolicy
