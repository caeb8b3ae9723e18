#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "optpolicy/core_model.hpp"
#include "optpolicy/error.hpp"
#include "optpolicy/matrix.hpp"
#include "optpolicy/parallel.hpp"
#include "optpolicy/random.hpp"

namespace optpolicy {

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 5;
  // Features sampled per split; 0 selects ceil(sqrt(p)) for classification
  // and ceil(p/3) for regression.
  std::size_t mtry = 0;
  bool bootstrap = true;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
};

enum class ForestTask { kRegression, kClassification };

// A single CART tree with flattened storage. Leaf payloads live in `values`:
// one mean per leaf for regression, a class-frequency vector for classification.
class CartTree {
 public:
  struct Node {
    std::int32_t left = -1;  // -1 marks a leaf
    std::int32_t right = -1;
    std::uint32_t feature = 0;
    double threshold = 0.0;
    std::uint32_t value_offset = 0;
  };

  std::vector<Node> nodes;
  std::vector<double> values;

  std::span<const double> leaf_values(std::span<const double> x, std::size_t width) const {
    std::size_t id = 0;
    while (nodes[id].left >= 0) {
      const Node& n = nodes[id];
      id = static_cast<std::size_t>(x[n.feature] < n.threshold ? n.left : n.right);
    }
    return {values.data() + nodes[id].value_offset, width};
  }

  std::size_t depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].left >= 0) {
        d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
        d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
      }
      best = std::max(best, d[i]);
    }
    return best;
  }
};

class ForestModel {
 public:
  ForestTask task = ForestTask::kRegression;
  std::size_t num_features = 0;
  std::size_t num_classes = 0;  // classification only
  std::vector<CartTree> trees;
  // Out-of-bag mean squared error (regression) or accuracy (classification);
  // NaN when bootstrap is off or no row was ever out of bag.
  double oob_score = std::numeric_limits<double>::quiet_NaN();

  std::vector<double> predict(const MatrixD& x) const {
    if (task != ForestTask::kRegression) throw InputError("predict called on a classification forest");
    check(x);
    std::vector<double> out(x.rows(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double sum = 0.0;
      for (const auto& t : trees) sum += t.leaf_values(x.row(i), 1)[0];
      out[i] = sum / static_cast<double>(trees.size());
    }
    return out;
  }

  MatrixD predict_proba(const MatrixD& x) const {
    if (task != ForestTask::kClassification) throw InputError("predict_proba called on a regression forest");
    check(x);
    MatrixD out(x.rows(), num_classes, 0.0);
    const double w = 1.0 / static_cast<double>(trees.size());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto dst = out.row(i);
      for (const auto& t : trees) {
        auto v = t.leaf_values(x.row(i), num_classes);
        for (std::size_t k = 0; k < num_classes; ++k) dst[k] += v[k];
      }
      double total = 0.0;
      for (std::size_t k = 0; k < num_classes; ++k) total += (dst[k] *= w);
      for (std::size_t k = 0; k < num_classes; ++k) dst[k] /= total;
    }
    return out;
  }

 private:
  void check(const MatrixD& x) const {
    if (x.rows() > 0 && x.cols() != num_features) {
      throw InputError("forest expects " + std::to_string(num_features) + " features, got " +
                       std::to_string(x.cols()));
    }
  }
};

namespace detail {

class CartBuilder {
 public:
  CartBuilder(const MatrixD& x, std::span<const double> y, std::span<const std::size_t> labels,
              std::size_t num_classes, ForestTask task, const ForestConfig& cfg, std::size_t mtry)
      : x_(x), y_(y), labels_(labels), num_classes_(num_classes), task_(task), cfg_(cfg), mtry_(mtry) {}

  CartTree build(std::vector<std::size_t> samples, Rng& rng) {
    tree_ = CartTree{};
    samples_ = std::move(samples);
    features_.resize(x_.cols());
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    scratch_.resize(samples_.size());
    counts_left_.assign(num_classes_, 0);
    counts_total_.assign(num_classes_, 0);
    grow(0, samples_.size(), 0, rng);
    return std::move(tree_);
  }

 private:
  struct Split {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double score = -std::numeric_limits<double>::infinity();
  };

  std::size_t width() const { return task_ == ForestTask::kRegression ? 1 : num_classes_; }

  std::size_t make_leaf(std::size_t begin, std::size_t end) {
    CartTree::Node node;
    node.value_offset = static_cast<std::uint32_t>(tree_.values.size());
    const double n = static_cast<double>(end - begin);
    if (task_ == ForestTask::kRegression) {
      double sum = 0.0;
      for (std::size_t k = begin; k < end; ++k) sum += y_[samples_[k]];
      tree_.values.push_back(sum / n);
    } else {
      std::vector<double> freq(num_classes_, 0.0);
      for (std::size_t k = begin; k < end; ++k) freq[labels_[samples_[k]]] += 1.0;
      for (double& f : freq) f /= n;
      tree_.values.insert(tree_.values.end(), freq.begin(), freq.end());
    }
    tree_.nodes.push_back(node);
    return tree_.nodes.size() - 1;
  }

  bool pure(std::size_t begin, std::size_t end) const {
    for (std::size_t k = begin + 1; k < end; ++k) {
      if (task_ == ForestTask::kRegression) {
        if (y_[samples_[k]] != y_[samples_[begin]]) return false;
      } else if (labels_[samples_[k]] != labels_[samples_[begin]]) {
        return false;
      }
    }
    return true;
  }

  Split best_split(std::size_t begin, std::size_t end, Rng& rng) {
    const std::size_t n = end - begin;
    const std::size_t min_leaf = std::max<std::size_t>(1, cfg_.min_leaf);
    Split best;

    // Parent score; a split must strictly improve on it.
    double parent = 0.0;
    if (task_ == ForestTask::kRegression) {
      double sum = 0.0;
      for (std::size_t k = begin; k < end; ++k) sum += y_[samples_[k]];
      parent = sum * sum / static_cast<double>(n);
    } else {
      std::fill(counts_total_.begin(), counts_total_.end(), 0);
      for (std::size_t k = begin; k < end; ++k) ++counts_total_[labels_[samples_[k]]];
      double sq = 0.0;
      for (auto c : counts_total_) sq += static_cast<double>(c) * static_cast<double>(c);
      parent = sq / static_cast<double>(n);
    }
    const double tol = 1e-12 * std::max(1.0, std::abs(parent));

    // Partial Fisher-Yates: the first mtry_ entries are the sampled features.
    for (std::size_t f = 0; f < mtry_; ++f) {
      std::uniform_int_distribution<std::size_t> pick(f, features_.size() - 1);
      std::swap(features_[f], features_[pick(rng)]);
    }

    for (std::size_t f = 0; f < mtry_; ++f) {
      const std::size_t feat = features_[f];
      for (std::size_t k = 0; k < n; ++k) {
        std::size_t s = samples_[begin + k];
        scratch_[k] = {x_(s, feat), s};
      }
      std::sort(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(n),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      if (scratch_[0].first == scratch_[n - 1].first) continue;

      if (task_ == ForestTask::kRegression) {
        double total = 0.0;
        for (std::size_t k = 0; k < n; ++k) total += y_[scratch_[k].second];
        double left = 0.0;
        for (std::size_t k = 1; k < n; ++k) {
          left += y_[scratch_[k - 1].second];
          if (k < min_leaf || n - k < min_leaf) continue;
          if (!(scratch_[k - 1].first < scratch_[k].first)) continue;
          const double right = total - left;
          const double nl = static_cast<double>(k);
          const double nr = static_cast<double>(n - k);
          const double score = left * left / nl + right * right / nr;
          if (score > best.score) {
            best = {true, feat, split_threshold(scratch_[k - 1].first, scratch_[k].first), score};
          }
        }
      } else {
        std::fill(counts_left_.begin(), counts_left_.end(), 0);
        double sq_left = 0.0;
        double sq_right = 0.0;
        for (auto c : counts_total_) sq_right += static_cast<double>(c) * static_cast<double>(c);
        for (std::size_t k = 1; k < n; ++k) {
          const std::size_t cls = labels_[scratch_[k - 1].second];
          const double cl = static_cast<double>(counts_left_[cls]);
          const double cr = static_cast<double>(counts_total_[cls] - counts_left_[cls]);
          sq_left += 2.0 * cl + 1.0;
          sq_right += -2.0 * cr + 1.0;
          ++counts_left_[cls];
          if (k < min_leaf || n - k < min_leaf) continue;
          if (!(scratch_[k - 1].first < scratch_[k].first)) continue;
          const double score = sq_left / static_cast<double>(k) + sq_right / static_cast<double>(n - k);
          if (score > best.score) {
            best = {true, feat, split_threshold(scratch_[k - 1].first, scratch_[k].first), score};
          }
        }
      }
    }
    if (best.found && !(best.score > parent + tol)) best.found = false;
    return best;
  }

  std::size_t grow(std::size_t begin, std::size_t end, std::size_t depth, Rng& rng) {
    const std::size_t n = end - begin;
    if (depth >= cfg_.max_depth || n < 2 * std::max<std::size_t>(1, cfg_.min_leaf) || pure(begin, end)) {
      return make_leaf(begin, end);
    }
    Split split = best_split(begin, end, rng);
    if (!split.found) return make_leaf(begin, end);

    auto mid_it = std::partition(samples_.begin() + static_cast<std::ptrdiff_t>(begin),
                                 samples_.begin() + static_cast<std::ptrdiff_t>(end),
                                 [&](std::size_t s) { return x_(s, split.feature) < split.threshold; });
    const std::size_t mid = static_cast<std::size_t>(mid_it - samples_.begin());

    const std::size_t id = tree_.nodes.size();
    CartTree::Node node;
    node.feature = static_cast<std::uint32_t>(split.feature);
    node.threshold = split.threshold;
    tree_.nodes.push_back(node);
    const std::size_t left = grow(begin, mid, depth + 1, rng);
    const std::size_t right = grow(mid, end, depth + 1, rng);
    tree_.nodes[id].left = static_cast<std::int32_t>(left);
    tree_.nodes[id].right = static_cast<std::int32_t>(right);
    return id;
  }

  const MatrixD& x_;
  std::span<const double> y_;
  std::span<const std::size_t> labels_;
  std::size_t num_classes_;
  ForestTask task_;
  const ForestConfig& cfg_;
  std::size_t mtry_;

  CartTree tree_;
  std::vector<std::size_t> samples_;
  std::vector<std::size_t> features_;
  std::vector<std::pair<double, std::size_t>> scratch_;
  std::vector<std::size_t> counts_left_;
  std::vector<std::size_t> counts_total_;
};

inline ForestModel fit_forest(const MatrixD& x, std::span<const double> y, std::span<const std::size_t> labels,
                              std::size_t num_classes, ForestTask task, const ForestConfig& cfg) {
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  if (n < 2) throw InputError("forest fit needs at least 2 rows, got " + std::to_string(n));
  if (p == 0) throw InputError("forest fit needs at least one feature");
  if (cfg.n_trees < 1) throw ConfigError("n_trees must be >= 1");
  require_finite(x, "forest features");

  std::size_t mtry = cfg.mtry;
  if (mtry == 0) {
    const double dp = static_cast<double>(p);
    mtry = task == ForestTask::kClassification ? static_cast<std::size_t>(std::ceil(std::sqrt(dp)))
                                               : static_cast<std::size_t>(std::ceil(dp / 3.0));
  }
  if (mtry < 1 || mtry > p) throw ConfigError("mtry must lie in [1, " + std::to_string(p) + "]");

  ForestModel model;
  model.task = task;
  model.num_features = p;
  model.num_classes = num_classes;
  model.trees.resize(cfg.n_trees);
  std::vector<std::vector<std::uint8_t>> inbag(cfg.bootstrap ? cfg.n_trees : 0);

  parallel_for(cfg.n_trees, cfg.jobs, [&](std::size_t t) {
    Rng rng = make_rng(cfg.seed, {0x7f4a7c15u, t});
    std::vector<std::size_t> samples(n);
    if (cfg.bootstrap) {
      std::uniform_int_distribution<std::size_t> draw(0, n - 1);
      inbag[t].assign(n, 0);
      for (auto& s : samples) {
        s = draw(rng);
        inbag[t][s] = 1;
      }
    } else {
      std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    CartBuilder builder(x, y, labels, num_classes, task, cfg, mtry);
    model.trees[t] = builder.build(std::move(samples), rng);
  });

  if (cfg.bootstrap) {
    const std::size_t width = task == ForestTask::kRegression ? 1 : num_classes;
    std::vector<double> acc(n * width, 0.0);
    std::vector<std::size_t> votes(n, 0);
    for (std::size_t t = 0; t < cfg.n_trees; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        if (inbag[t][i]) continue;
        auto v = model.trees[t].leaf_values(x.row(i), width);
        for (std::size_t k = 0; k < width; ++k) acc[i * width + k] += v[k];
        ++votes[i];
      }
    }
    double score = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (votes[i] == 0) continue;
      ++counted;
      if (task == ForestTask::kRegression) {
        double err = acc[i] / static_cast<double>(votes[i]) - y[i];
        score += err * err;
      } else {
        auto first = acc.begin() + static_cast<std::ptrdiff_t>(i * width);
        auto best = static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(width)) - first);
        score += best == labels[i] ? 1.0 : 0.0;
      }
    }
    if (counted > 0) model.oob_score = score / static_cast<double>(counted);
  }
  return model;
}

}  // namespace detail

inline ForestModel fit_regressor(const MatrixD& x, std::span<const double> y, const ForestConfig& cfg) {
  if (y.size() != x.rows()) throw InputError("target length does not match feature rows");
  require_finite(y, "regression targets");
  return detail::fit_forest(x, y, {}, 0, ForestTask::kRegression, cfg);
}

// Labels are class indices in [0, num_classes). Classes absent from the data
// receive probability 0; a single present class yields a degenerate model
// that predicts it with probability 1.
inline ForestModel fit_classifier(const MatrixD& x, std::span<const std::size_t> labels, std::size_t num_classes,
                                  const ForestConfig& cfg) {
  if (labels.size() != x.rows()) throw InputError("label count does not match feature rows");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw InputError("label at row " + std::to_string(i) + " is outside 0.." + std::to_string(num_classes - 1));
    }
  }
  return detail::fit_forest(x, {}, labels, num_classes, ForestTask::kClassification, cfg);
}

inline ForestModel fit_classifier(const MatrixD& x, std::span<const std::size_t> labels, const ForestConfig& cfg) {
  std::size_t k = labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1;
  return fit_classifier(x, labels, k, cfg);
}

// ---------------------------------------------------------------------------
// Pluggable supervised learners used by reward estimation. A fit function
// returns a prediction function over new feature rows.

using RegressionFn = std::function<std::vector<double>(const MatrixD&)>;
using ProbabilityFn = std::function<MatrixD(const MatrixD&)>;

struct Learners {
  std::function<RegressionFn(const MatrixD& x, std::span<const double> y, std::uint64_t seed)> fit_regressor;
  std::function<ProbabilityFn(const MatrixD& x, std::span<const std::size_t> labels, std::size_t num_classes,
                              std::uint64_t seed)>
      fit_classifier;
};

inline Learners forest_learners(ForestConfig cfg) {
  Learners l;
  l.fit_regressor = [cfg](const MatrixD& x, std::span<const double> y, std::uint64_t seed) -> RegressionFn {
    ForestConfig c = cfg;
    c.seed = seed;
    auto model = std::make_shared<const ForestModel>(optpolicy::fit_regressor(x, y, c));
    return [model](const MatrixD& q) { return model->predict(q); };
  };
  l.fit_classifier = [cfg](const MatrixD& x, std::span<const std::size_t> labels, std::size_t k,
                           std::uint64_t seed) -> ProbabilityFn {
    ForestConfig c = cfg;
    c.seed = seed;
    auto model = std::make_shared<const ForestModel>(optpolicy::fit_classifier(x, labels, k, c));
    return [model](const MatrixD& q) { return model->predict_proba(q); };
  };
  return l;
}

}  // namespace optpolicy
