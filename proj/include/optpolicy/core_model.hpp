#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "optpolicy/error.hpp"
#include "optpolicy/matrix.hpp"

namespace optpolicy {

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline void require_finite(std::span<const double> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw InputError(what + ": non-finite value at position " + std::to_string(i));
    }
  }
}

inline void require_finite(const MatrixD& m, const std::string& what) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) {
        throw InputError(what + ": non-finite value at row " + std::to_string(i) + ", column " +
                         std::to_string(j));
      }
    }
  }
}

// Threshold separating two consecutive distinct sorted values lo < hi under
// the "x < threshold goes left" rule. The midpoint is used unless rounding
// collapses it onto one of the endpoints.
inline double split_threshold(double lo, double hi) {
  double mid = lo + (hi - lo) / 2.0;
  if (!(mid > lo) || !(mid <= hi)) return hi;
  return mid;
}

// ---------------------------------------------------------------------------
// Treatment space

struct DoseRange {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> grid;
};

// `count` evenly spaced points over [lo, hi], endpoints included.
inline std::vector<double> even_grid(double lo, double hi, std::size_t count) {
  if (count == 0) throw ConfigError("dose grid must have at least one point");
  if (count == 1) return {lo + (hi - lo) / 2.0};
  std::vector<double> g(count);
  for (std::size_t k = 0; k < count; ++k) {
    g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  }
  g.back() = hi;
  return g;
}

class TreatmentSpace {
 public:
  struct Discrete {
    std::vector<std::string> labels;
  };
  struct Continuous {
    std::vector<DoseRange> doses;
  };

  static TreatmentSpace discrete(std::vector<std::string> labels) {
    TreatmentSpace s;
    s.kind_ = Discrete{std::move(labels)};
    s.validate();
    return s;
  }
  static TreatmentSpace discrete(std::size_t count) {
    std::vector<std::string> labels;
    for (std::size_t t = 0; t < count; ++t) labels.push_back(std::to_string(t));
    return discrete(std::move(labels));
  }
  static TreatmentSpace continuous(std::vector<DoseRange> doses) {
    TreatmentSpace s;
    s.kind_ = Continuous{std::move(doses)};
    s.validate();
    return s;
  }

  bool is_discrete() const { return std::holds_alternative<Discrete>(kind_); }
  const Discrete& as_discrete() const { return std::get<Discrete>(kind_); }
  const Continuous& as_continuous() const { return std::get<Continuous>(kind_); }

  // Number of treatment dimensions: arms for discrete, dose columns for continuous.
  std::size_t num_dimensions() const {
    return is_discrete() ? 1 : as_continuous().doses.size();
  }

  // Number of prescription options: arm count, or product of grid sizes.
  std::size_t num_candidates() const {
    if (is_discrete()) return as_discrete().labels.size();
    std::size_t count = 1;
    for (const auto& d : as_continuous().doses) count *= d.grid.size();
    return count;
  }

  // Dose vector of candidate t. The first dose varies slowest.
  std::vector<double> candidate_doses(std::size_t t) const {
    const auto& doses = as_continuous().doses;
    std::vector<double> out(doses.size());
    for (std::size_t k = doses.size(); k-- > 0;) {
      const auto& g = doses[k].grid;
      out[k] = g[t % g.size()];
      t /= g.size();
    }
    return out;
  }

  std::vector<std::string> candidate_labels() const {
    if (is_discrete()) return as_discrete().labels;
    const auto& doses = as_continuous().doses;
    std::vector<std::string> out;
    out.reserve(num_candidates());
    for (std::size_t t = 0; t < num_candidates(); ++t) {
      auto v = candidate_doses(t);
      std::string label;
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (k) label += "|";
        label += doses[k].name + "=" + format_number(v[k]);
      }
      out.push_back(std::move(label));
    }
    return out;
  }

  void validate() const {
    if (is_discrete()) {
      const auto& labels = as_discrete().labels;
      if (labels.size() < 2) throw ConfigError("discrete treatment space needs at least 2 labels");
      std::set<std::string> unique(labels.begin(), labels.end());
      if (unique.size() != labels.size()) throw ConfigError("treatment labels must be unique");
      return;
    }
    const auto& doses = as_continuous().doses;
    if (doses.empty()) throw ConfigError("continuous treatment space needs at least one dose");
    for (const auto& d : doses) {
      if (!std::isfinite(d.lo) || !std::isfinite(d.hi) || d.lo > d.hi) {
        throw ConfigError("dose '" + d.name + "': invalid range");
      }
      if (d.grid.empty()) throw ConfigError("dose '" + d.name + "': empty candidate grid");
      for (std::size_t k = 0; k < d.grid.size(); ++k) {
        if (!std::isfinite(d.grid[k]) || d.grid[k] < d.lo || d.grid[k] > d.hi) {
          throw ConfigError("dose '" + d.name + "': grid value outside [lo, hi]");
        }
        if (k > 0 && !(d.grid[k] > d.grid[k - 1])) {
          throw ConfigError("dose '" + d.name + "': grid must be strictly increasing");
        }
      }
    }
    if (num_candidates() < 2) throw ConfigError("continuous treatment space needs at least 2 candidates");
  }

 private:
  std::variant<Discrete, Continuous> kind_;
};

// ---------------------------------------------------------------------------
// Dataset

// Observational triple. Discrete treatments are arm indices 0..m-1 in `arms`;
// continuous treatments are an n x m dose matrix in `doses`. Exactly one of
// the two is populated.
struct Dataset {
  MatrixD features;
  std::vector<double> outcomes;
  std::vector<std::size_t> arms;
  MatrixD doses;
  std::vector<std::string> feature_names;

  std::size_t size() const { return features.rows(); }
  std::size_t num_features() const { return features.cols(); }
  bool is_discrete() const { return doses.cols() == 0; }

  static std::vector<std::string> default_names(std::size_t p) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
    return names;
  }

  static Dataset discrete(MatrixD features, std::vector<double> outcomes,
                          std::vector<std::size_t> arms, std::size_t num_arms,
                          std::vector<std::string> names = {}) {
    Dataset ds;
    if (names.empty()) names = default_names(features.cols());
    ds.features = std::move(features);
    ds.outcomes = std::move(outcomes);
    ds.arms = std::move(arms);
    ds.feature_names = std::move(names);
    ds.validate();
    for (std::size_t i = 0; i < ds.arms.size(); ++i) {
      if (ds.arms[i] >= num_arms) {
        throw InputError("treatment at row " + std::to_string(i) + " is outside 0.." +
                         std::to_string(num_arms - 1));
      }
    }
    return ds;
  }

  static Dataset continuous(MatrixD features, std::vector<double> outcomes, MatrixD doses,
                            std::vector<std::string> names = {}) {
    Dataset ds;
    if (names.empty()) names = default_names(features.cols());
    ds.features = std::move(features);
    ds.outcomes = std::move(outcomes);
    ds.doses = std::move(doses);
    ds.feature_names = std::move(names);
    ds.validate();
    if (ds.doses.cols() == 0) throw InputError("continuous dataset needs at least one dose column");
    return ds;
  }

  void validate() const {
    const std::size_t n = features.rows();
    if (n == 0) throw InputError("dataset has no rows");
    if (features.cols() == 0) throw InputError("dataset has no features");
    if (outcomes.size() != n) {
      throw InputError("outcome count " + std::to_string(outcomes.size()) +
                       " does not match feature rows " + std::to_string(n));
    }
    if (feature_names.size() != features.cols()) throw InputError("feature name count mismatch");
    if (doses.cols() == 0) {
      if (arms.size() != n) throw InputError("treatment count does not match feature rows");
    } else if (doses.rows() != n) {
      throw InputError("dose rows do not match feature rows");
    }
    require_finite(features, "features");
    require_finite(outcomes, "outcomes");
    if (doses.cols() > 0) require_finite(doses, "doses");
  }
};

// ---------------------------------------------------------------------------
// Reward matrix: values(i, t) is the outcome of row i under candidate t.
// Lower is better.

struct RewardMatrix {
  MatrixD values;
  std::vector<std::string> labels;

  RewardMatrix() = default;
  RewardMatrix(MatrixD v, std::vector<std::string> l) : values(std::move(v)), labels(std::move(l)) {
    validate();
  }

  std::size_t rows() const { return values.rows(); }
  std::size_t num_treatments() const { return values.cols(); }

  void validate() const {
    if (values.cols() < 2) throw InputError("reward matrix needs at least 2 treatment columns");
    if (labels.size() != values.cols()) throw InputError("reward label count does not match columns");
    require_finite(values, "reward matrix");
  }

  // Negated copy, for problems where higher outcomes are better.
  RewardMatrix negated() const {
    RewardMatrix out = *this;
    for (double& v : out.values.data()) v = -v;
    return out;
  }

  RewardMatrix select_rows(std::span<const std::size_t> idx) const {
    RewardMatrix out;
    out.values = values.select_rows(idx);
    out.labels = labels;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Policy tree

struct Hyperparameters {
  int max_depth = 2;
  double alpha = 0.0;
  std::size_t min_leaf = 1;
  std::size_t restarts = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (max_depth < 0) throw ConfigError("max_depth must be >= 0");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
    if (min_leaf < 1) throw ConfigError("min_leaf must be >= 1");
    if (restarts < 1) throw ConfigError("restarts must be >= 1");
  }

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

struct Node {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  bool leaf = true;
  // Branch fields.
  std::size_t feature = 0;
  double threshold = 0.0;
  std::size_t left = kNone;
  std::size_t right = kNone;
  // Leaf fields.
  std::size_t treatment = 0;
  std::size_t n_train = 0;

  static Node make_leaf(std::size_t treatment, std::size_t n_train) {
    Node n;
    n.leaf = true;
    n.treatment = treatment;
    n.n_train = n_train;
    return n;
  }
  static Node make_branch(std::size_t feature, double threshold, std::size_t left, std::size_t right) {
    Node n;
    n.leaf = false;
    n.feature = feature;
    n.threshold = threshold;
    n.left = left;
    n.right = right;
    return n;
  }

  friend bool operator==(const Node&, const Node&) = default;
};

// One step of a root-to-leaf path.
struct PathStep {
  std::size_t feature;
  double threshold;
  bool went_left;
};

// Axis-aligned binary tree stored as an arena. Node 0 is the root and every
// child index is greater than its parent's.
class PolicyTree {
 public:
  std::vector<Node> nodes;
  std::size_t num_features = 0;
  std::vector<std::string> feature_names;
  std::vector<std::string> treatment_labels;
  Hyperparameters hyperparams;
  double objective_train = 0.0;

  std::size_t num_treatments() const { return treatment_labels.size(); }

  static PolicyTree single_leaf(std::size_t treatment, std::size_t n_train,
                                std::vector<std::string> feature_names,
                                std::vector<std::string> treatment_labels) {
    PolicyTree t;
    t.nodes.push_back(Node::make_leaf(treatment, n_train));
    t.num_features = feature_names.size();
    t.feature_names = std::move(feature_names);
    t.treatment_labels = std::move(treatment_labels);
    return t;
  }

  // v(x): the leaf reached by x. Ties at a threshold route right.
  std::size_t assign_leaf(std::span<const double> x) const {
    check_input(x);
    return route(x);
  }

  // Routing without input validation, for callers that already checked.
  std::size_t route(std::span<const double> x) const {
    std::size_t id = 0;
    while (!nodes[id].leaf) {
      const Node& n = nodes[id];
      id = x[n.feature] < n.threshold ? n.left : n.right;
    }
    return id;
  }

  std::size_t prescribe(std::span<const double> x) const { return nodes[assign_leaf(x)].treatment; }

  std::vector<std::size_t> prescribe(const MatrixD& x) const {
    if (x.rows() > 0) check_columns(x.cols());
    std::vector<std::size_t> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto row = x.row(i);
      check_finite(row);
      out[i] = nodes[route(row)].treatment;
    }
    return out;
  }

  std::vector<PathStep> path(std::span<const double> x) const {
    check_input(x);
    std::vector<PathStep> steps;
    std::size_t id = 0;
    while (!nodes[id].leaf) {
      const Node& n = nodes[id];
      bool left = x[n.feature] < n.threshold;
      steps.push_back({n.feature, n.threshold, left});
      id = left ? n.left : n.right;
    }
    return steps;
  }

  std::size_t num_branches() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return !n.leaf; }));
  }
  std::size_t num_leaves() const { return nodes.size() - num_branches(); }

  std::vector<std::size_t> leaves() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].leaf) out.push_back(i);
    }
    return out;
  }

  // Depth of every node; root has depth 0.
  std::vector<int> node_depths() const {
    std::vector<int> depth(nodes.size(), 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i].leaf) {
        depth[nodes[i].left] = depth[i] + 1;
        depth[nodes[i].right] = depth[i] + 1;
      }
    }
    return depth;
  }

  int depth() const {
    auto d = node_depths();
    return d.empty() ? 0 : *std::max_element(d.begin(), d.end());
  }

  // Structural validity: rooted binary tree with children after parents,
  // each non-root node referenced exactly once, indices in range.
  void validate() const {
    if (nodes.empty()) throw InputError("policy tree has no nodes");
    if (treatment_labels.size() < 2) throw InputError("policy tree needs at least 2 treatment labels");
    if (feature_names.size() != num_features) throw InputError("feature name count mismatch");
    std::vector<int> parents(nodes.size(), 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Node& n = nodes[i];
      if (n.leaf) {
        if (n.treatment >= treatment_labels.size()) {
          throw InputError("node " + std::to_string(i) + ": treatment index out of range");
        }
        continue;
      }
      if (n.feature >= num_features) {
        throw InputError("node " + std::to_string(i) + ": feature index out of range");
      }
      if (!std::isfinite(n.threshold)) throw InputError("node " + std::to_string(i) + ": non-finite threshold");
      for (std::size_t c : {n.left, n.right}) {
        if (c == Node::kNone || c >= nodes.size() || c <= i) {
          throw InputError("node " + std::to_string(i) + ": invalid child index");
        }
        ++parents[c];
      }
    }
    for (std::size_t i = 1; i < nodes.size(); ++i) {
      if (parents[i] != 1) throw InputError("node " + std::to_string(i) + " is not referenced exactly once");
    }
  }

  // Structural equality, ignoring the training objective and hyperparameters.
  bool same_structure(const PolicyTree& other) const {
    return nodes == other.nodes && num_features == other.num_features &&
           feature_names == other.feature_names && treatment_labels == other.treatment_labels;
  }

  friend bool operator==(const PolicyTree&, const PolicyTree&) = default;

 private:
  void check_columns(std::size_t p) const {
    if (p != num_features) {
      throw InputError("feature vector has " + std::to_string(p) + " entries, tree expects " +
                       std::to_string(num_features));
    }
  }
  static void check_finite(std::span<const double> x) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (!std::isfinite(x[j])) throw InputError("non-finite feature at position " + std::to_string(j));
    }
  }
  void check_input(std::span<const double> x) const {
    check_columns(x.size());
    check_finite(x);
  }
};

// Mean reward of the tree's prescriptions: (1/n) * sum_i rewards(i, tau(x_i)).
inline double policy_objective(const PolicyTree& tree, const RewardMatrix& rewards, const MatrixD& features) {
  if (rewards.rows() != features.rows()) {
    throw InputError("reward rows " + std::to_string(rewards.rows()) + " do not match feature rows " +
                     std::to_string(features.rows()));
  }
  if (rewards.num_treatments() != tree.num_treatments()) {
    throw InputError("reward columns do not match tree treatments");
  }
  if (features.rows() == 0) throw InputError("policy_objective needs at least one row");
  auto z = tree.prescribe(features);
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += rewards.values(i, z[i]);
  return total / static_cast<double>(z.size());
}

// policy_objective plus alpha per branch node.
inline double penalized_objective(const PolicyTree& tree, const RewardMatrix& rewards, const MatrixD& features,
                                  double alpha) {
  return policy_objective(tree, rewards, features) + alpha * static_cast<double>(tree.num_branches());
}

}  // namespace optpolicy
