#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "optpolicy/core_model.hpp"
#include "optpolicy/forest.hpp"
#include "optpolicy/parallel.hpp"
#include "optpolicy/random.hpp"

namespace optpolicy {

struct PropensityEstimate {
  MatrixD probs;      // clipped and re-normalized
  MatrixD raw_probs;  // classifier output before clipping
  std::vector<std::size_t> folds;
  // Rows used to train the classifier that scored fold f.
  std::vector<std::vector<std::size_t>> fold_training_rows;
  double clip_lo = 0.01;
  double clip_hi = 1.0;
  std::size_t clipped_entries = 0;
};

struct OutcomeEstimate {
  MatrixD preds;
  // Rows used to fit the model of arm t: exactly {i : z_i = t}.
  std::vector<std::vector<std::size_t>> arm_rows;
  std::vector<RegressionFn> models;
};

// K x K penalty matrix: L(j, k) is the cost of assigning a class-j row to class k.
using PenaltyMatrix = MatrixD;

struct PropensityOptions {
  std::size_t k_folds = 5;
  double clip_lo = 0.01;
  double clip_hi = 1.0;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
};

// Projects a probability row onto {p : lo <= p_t <= hi, sum p = 1}. Entries
// pinned at a bound stay there while the free mass is rescaled, until no
// free entry violates a bound. Returns how many entries ended up pinned.
inline std::size_t clip_probabilities(std::span<double> row, double lo, double hi) {
  const std::size_t k = row.size();
  std::vector<int> pinned(k, 0);  // -1 at lo, +1 at hi
  std::size_t n_pinned = 0;
  for (std::size_t iter = 0; iter <= k; ++iter) {
    double fixed = 0.0;
    double free_mass = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = 0; t < k; ++t) {
      if (pinned[t] < 0) {
        fixed += lo;
      } else if (pinned[t] > 0) {
        fixed += hi;
      } else {
        free_mass += row[t];
        ++free_count;
      }
    }
    const double target = 1.0 - fixed;
    bool changed = false;
    for (std::size_t t = 0; t < k; ++t) {
      if (pinned[t] != 0) {
        row[t] = pinned[t] < 0 ? lo : hi;
        continue;
      }
      row[t] = free_mass > 0.0 ? row[t] * target / free_mass : target / static_cast<double>(free_count);
    }
    for (std::size_t t = 0; t < k; ++t) {
      if (pinned[t] != 0) continue;
      if (row[t] < lo) {
        pinned[t] = -1;
        changed = true;
      } else if (row[t] > hi) {
        pinned[t] = 1;
        changed = true;
      }
    }
    if (!changed) break;
  }
  for (int p : pinned) n_pinned += p != 0 ? 1 : 0;
  for (std::size_t t = 0; t < k; ++t) {
    if (pinned[t] < 0) row[t] = lo;
    if (pinned[t] > 0) row[t] = hi;
  }
  return n_pinned;
}

namespace detail {

inline std::size_t count_arms(const Dataset& ds) {
  if (!ds.is_discrete()) throw ConfigError("this estimator needs a discrete-treatment dataset");
  return ds.arms.empty() ? 0 : *std::max_element(ds.arms.begin(), ds.arms.end()) + 1;
}

inline std::vector<std::vector<std::size_t>> rows_by_arm(const Dataset& ds, std::size_t num_arms) {
  std::vector<std::vector<std::size_t>> out(num_arms);
  for (std::size_t i = 0; i < ds.arms.size(); ++i) out[ds.arms[i]].push_back(i);
  return out;
}

}  // namespace detail

// Stratified fold assignment: each arm's rows are shuffled and dealt
// round-robin, so every fold holds every arm when each arm has >= k rows.
inline std::vector<std::size_t> stratified_folds(const Dataset& ds, std::size_t num_arms, std::size_t k_folds,
                                                 std::uint64_t seed) {
  if (k_folds < 2) throw ConfigError("k_folds must be >= 2");
  auto by_arm = detail::rows_by_arm(ds, num_arms);
  std::vector<std::size_t> folds(ds.size(), 0);
  Rng rng = make_rng(seed, {0xf01d5u});
  std::size_t offset = 0;
  for (std::size_t t = 0; t < num_arms; ++t) {
    auto& rows = by_arm[t];
    if (rows.size() < k_folds) {
      throw InputError("treatment " + std::to_string(t) + " has " + std::to_string(rows.size()) +
                       " rows, fewer than k_folds=" + std::to_string(k_folds) +
                       "; every training fold must contain every treatment (reduce k_folds or "
                       "collect more rows for this treatment)");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t r = 0; r < rows.size(); ++r) folds[rows[r]] = (offset + r) % k_folds;
    offset += rows.size();
  }
  return folds;
}

inline PropensityEstimate estimate_propensity(const Dataset& ds, std::size_t num_arms, const Learners& learners,
                                              const PropensityOptions& opt) {
  ds.validate();
  if (!ds.is_discrete()) throw ConfigError("propensity estimation needs discrete treatments");
  if (num_arms < 2) throw ConfigError("propensity estimation needs at least 2 treatments");
  if (!(opt.clip_lo >= 0.0) || !(opt.clip_hi <= 1.0) || opt.clip_lo > opt.clip_hi ||
      opt.clip_lo * static_cast<double>(num_arms) > 1.0 || opt.clip_hi * static_cast<double>(num_arms) < 1.0) {
    throw ConfigError("clip bounds must satisfy 0 <= lo <= hi <= 1 and lo*T <= 1 <= hi*T");
  }
  const std::size_t n = ds.size();
  PropensityEstimate est;
  est.clip_lo = opt.clip_lo;
  est.clip_hi = opt.clip_hi;
  est.folds = stratified_folds(ds, num_arms, opt.k_folds, opt.seed);
  est.fold_training_rows.resize(opt.k_folds);
  est.raw_probs = MatrixD(n, num_arms, 0.0);

  std::vector<std::vector<std::size_t>> held_out(opt.k_folds);
  for (std::size_t i = 0; i < n; ++i) {
    held_out[est.folds[i]].push_back(i);
    for (std::size_t f = 0; f < opt.k_folds; ++f) {
      if (f != est.folds[i]) est.fold_training_rows[f].push_back(i);
    }
  }

  parallel_for(opt.k_folds, opt.jobs, [&](std::size_t f) {
    const auto& train = est.fold_training_rows[f];
    std::vector<std::size_t> labels(train.size());
    std::vector<char> seen(num_arms, 0);
    for (std::size_t k = 0; k < train.size(); ++k) {
      labels[k] = ds.arms[train[k]];
      seen[labels[k]] = 1;
    }
    for (std::size_t t = 0; t < num_arms; ++t) {
      if (!seen[t]) {
        throw InputError("treatment " + std::to_string(t) + " is absent from the training rows of fold " +
                         std::to_string(f) + "; stratify folds by treatment");
      }
    }
    auto model = learners.fit_classifier(ds.features.select_rows(train), labels, num_arms,
                                         derive_seed(opt.seed, {0xc1a55u, f}));
    MatrixD probs = model(ds.features.select_rows(held_out[f]));
    for (std::size_t k = 0; k < held_out[f].size(); ++k) {
      auto src = probs.row(k);
      std::copy(src.begin(), src.end(), est.raw_probs.row(held_out[f][k]).begin());
    }
  });

  est.probs = est.raw_probs;
  for (std::size_t i = 0; i < n; ++i) est.clipped_entries += clip_probabilities(est.probs.row(i), opt.clip_lo, opt.clip_hi);
  return est;
}

inline PropensityEstimate estimate_propensity(const Dataset& ds, std::size_t num_arms, std::size_t k_folds,
                                              const ForestConfig& cfg, double clip_lo = 0.01,
                                              double clip_hi = 1.0) {
  PropensityOptions opt;
  opt.k_folds = k_folds;
  opt.clip_lo = clip_lo;
  opt.clip_hi = clip_hi;
  opt.seed = cfg.seed;
  return estimate_propensity(ds, num_arms, forest_learners(cfg), opt);
}

// Per-arm outcome models fit on each arm's full data, then evaluated for
// every row under every arm.
inline OutcomeEstimate estimate_outcomes(const Dataset& ds, std::size_t num_arms, const Learners& learners,
                                         std::size_t min_arm_rows, std::uint64_t seed, std::size_t jobs = 1) {
  ds.validate();
  if (!ds.is_discrete()) throw ConfigError("outcome estimation needs discrete treatments");
  OutcomeEstimate est;
  est.arm_rows = detail::rows_by_arm(ds, num_arms);
  for (std::size_t t = 0; t < num_arms; ++t) {
    if (est.arm_rows[t].size() < std::max<std::size_t>(2, min_arm_rows)) {
      throw InputError("treatment arm " + std::to_string(t) + " has " + std::to_string(est.arm_rows[t].size()) +
                       " rows; at least " + std::to_string(std::max<std::size_t>(2, min_arm_rows)) +
                       " are required to fit its outcome model");
    }
  }
  est.models.resize(num_arms);
  est.preds = MatrixD(ds.size(), num_arms, 0.0);
  parallel_for(num_arms, jobs, [&](std::size_t t) {
    const auto& rows = est.arm_rows[t];
    std::vector<double> y(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) y[k] = ds.outcomes[rows[k]];
    est.models[t] = learners.fit_regressor(ds.features.select_rows(rows), y, derive_seed(seed, {0x0c0eu, t}));
    auto pred = est.models[t](ds.features);
    for (std::size_t i = 0; i < ds.size(); ++i) est.preds(i, t) = pred[i];
  });
  require_finite(est.preds, "outcome predictions");
  return est;
}

inline OutcomeEstimate estimate_outcomes(const Dataset& ds, std::size_t num_arms, const ForestConfig& cfg) {
  return estimate_outcomes(ds, num_arms, forest_learners(cfg), 2 * cfg.min_leaf, cfg.seed, cfg.jobs);
}

// Gamma_it = (y_i - yhat_it) / phat_it * 1{z_i = t} + yhat_it.
inline RewardMatrix doubly_robust_rewards(const Dataset& ds, const PropensityEstimate& prop,
                                          const OutcomeEstimate& out, std::vector<std::string> labels = {}) {
  const std::size_t n = ds.size();
  const std::size_t t_count = out.preds.cols();
  if (prop.probs.rows() != n || out.preds.rows() != n || prop.probs.cols() != t_count) {
    throw InputError("doubly_robust_rewards: propensity/outcome shapes do not match the dataset");
  }
  if (!ds.is_discrete()) throw ConfigError("doubly-robust rewards need discrete treatments");
  if (labels.empty()) labels = TreatmentSpace::discrete(t_count).candidate_labels();
  MatrixD gamma(n, t_count);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < t_count; ++t) {
      const double yhat = out.preds(i, t);
      double g = yhat;
      if (ds.arms[i] == t) {
        const double p = prop.probs(i, t);
        if (!(p > 0.0)) {
          throw InputError("propensity at (" + std::to_string(i) + ", " + std::to_string(t) + ") is not positive");
        }
        g = (ds.outcomes[i] - yhat) / p + yhat;
      }
      if (!std::isfinite(g)) {
        throw InputError("doubly-robust reward at (" + std::to_string(i) + ", " + std::to_string(t) +
                         ") is not finite");
      }
      gamma(i, t) = g;
    }
  }
  return RewardMatrix(std::move(gamma), std::move(labels));
}

// ---------------------------------------------------------------------------
// Continuous doses: one regressor on [features | doses].

inline void check_doses(const Dataset& ds, const TreatmentSpace& space) {
  if (space.is_discrete()) throw ConfigError("dose rewards need a continuous treatment space");
  space.validate();
  const auto& doses = space.as_continuous().doses;
  if (ds.doses.cols() != doses.size()) {
    throw InputError("dataset has " + std::to_string(ds.doses.cols()) + " dose columns, treatment space declares " +
                     std::to_string(doses.size()));
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < doses.size(); ++k) {
      double d = ds.doses(i, k);
      if (d < doses[k].lo || d > doses[k].hi) {
        throw InputError("dose '" + doses[k].name + "' at row " + std::to_string(i) + " is outside [" +
                         format_number(doses[k].lo) + ", " + format_number(doses[k].hi) + "]");
      }
    }
  }
}

// Builds the n*T query matrix: row i*T + t is [x_i | candidate t doses].
inline MatrixD candidate_queries(const MatrixD& features, const TreatmentSpace& space) {
  const std::size_t n = features.rows();
  const std::size_t p = features.cols();
  const std::size_t t_count = space.num_candidates();
  const std::size_t m = space.num_dimensions();
  MatrixD q(n * t_count, p + m);
  std::vector<std::vector<double>> cand(t_count);
  for (std::size_t t = 0; t < t_count; ++t) cand[t] = space.candidate_doses(t);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = features.row(i);
    for (std::size_t t = 0; t < t_count; ++t) {
      auto dst = q.row(i * t_count + t);
      std::copy(x.begin(), x.end(), dst.begin());
      std::copy(cand[t].begin(), cand[t].end(), dst.begin() + static_cast<std::ptrdiff_t>(p));
    }
  }
  return q;
}

// A fitted outcome model over (features, doses) that scores every candidate.
struct DoseModel {
  TreatmentSpace space;
  RegressionFn regressor;
  ProbabilityFn classifier;  // set for binary outcomes

  RewardMatrix rewards(const MatrixD& features) const {
    const std::size_t n = features.rows();
    const std::size_t t_count = space.num_candidates();
    MatrixD q = candidate_queries(features, space);
    MatrixD gamma(n, t_count);
    if (classifier) {
      MatrixD probs = classifier(q);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < t_count; ++t) gamma(i, t) = probs(i * t_count + t, 1);
      }
    } else {
      auto pred = regressor(q);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < t_count; ++t) gamma(i, t) = pred[i * t_count + t];
      }
    }
    return RewardMatrix(std::move(gamma), space.candidate_labels());
  }
};

inline DoseModel fit_dose_model(const Dataset& ds, const TreatmentSpace& space, const Learners& learners,
                                std::uint64_t seed) {
  ds.validate();
  check_doses(ds, space);
  DoseModel model{space, {}, {}};
  model.regressor = learners.fit_regressor(hconcat(ds.features, ds.doses), ds.outcomes, derive_seed(seed, {0xd05eu}));
  return model;
}

inline RewardMatrix continuous_dose_rewards(const Dataset& ds, const TreatmentSpace& space, const Learners& learners,
                                            std::uint64_t seed) {
  return fit_dose_model(ds, space, learners, seed).rewards(ds.features);
}

inline RewardMatrix continuous_dose_rewards(const Dataset& ds, const TreatmentSpace& space, const ForestConfig& cfg) {
  return continuous_dose_rewards(ds, space, forest_learners(cfg), cfg.seed);
}

inline void check_binary_outcomes(const Dataset& ds) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.outcomes[i] != 0.0 && ds.outcomes[i] != 1.0) {
      throw InputError("outcome at row " + std::to_string(i) + " is not binary (0/1)");
    }
  }
}

// Binary outcomes: rewards are predicted event probabilities. Continuous
// spaces use one classifier on [features | doses]; discrete spaces use one
// classifier per arm.
inline RewardMatrix binary_outcome_rewards(const Dataset& ds, const TreatmentSpace& space, const Learners& learners,
                                           std::uint64_t seed) {
  ds.validate();
  check_binary_outcomes(ds);
  std::vector<std::size_t> labels(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = ds.outcomes[i] == 1.0 ? 1 : 0;

  if (!space.is_discrete()) {
    check_doses(ds, space);
    DoseModel model{space, {}, {}};
    model.classifier = learners.fit_classifier(hconcat(ds.features, ds.doses), labels, 2, derive_seed(seed, {0xb1au}));
    return model.rewards(ds.features);
  }

  const std::size_t t_count = space.num_candidates();
  auto by_arm = detail::rows_by_arm(ds, std::max(t_count, detail::count_arms(ds)));
  if (by_arm.size() != t_count) throw InputError("dataset uses treatments outside the declared space");
  MatrixD gamma(ds.size(), t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    if (by_arm[t].size() < 2) throw InputError("treatment arm " + std::to_string(t) + " has fewer than 2 rows");
    std::vector<std::size_t> arm_labels(by_arm[t].size());
    for (std::size_t k = 0; k < by_arm[t].size(); ++k) arm_labels[k] = labels[by_arm[t][k]];
    auto model = learners.fit_classifier(ds.features.select_rows(by_arm[t]), arm_labels, 2, derive_seed(seed, {0xb1au, t}));
    MatrixD probs = model(ds.features);
    for (std::size_t i = 0; i < ds.size(); ++i) gamma(i, t) = probs(i, 1);
  }
  return RewardMatrix(std::move(gamma), space.candidate_labels());
}

inline RewardMatrix binary_outcome_rewards(const Dataset& ds, const TreatmentSpace& space, const ForestConfig& cfg) {
  return binary_outcome_rewards(ds, space, forest_learners(cfg), cfg.seed);
}

// Weighted-loss classification: Gamma_it = L(z_i, t).
inline RewardMatrix penalty_rewards(std::span<const std::size_t> labels, const PenaltyMatrix& penalty,
                                    std::vector<std::string> names = {}) {
  const std::size_t k = penalty.rows();
  if (k < 2 || penalty.cols() != k) throw ConfigError("penalty matrix must be square with at least 2 classes");
  require_finite(penalty, "penalty matrix");
  if (names.empty()) names = TreatmentSpace::discrete(k).candidate_labels();
  MatrixD gamma(labels.size(), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) {
      throw InputError("label at row " + std::to_string(i) + " is outside 0.." + std::to_string(k - 1));
    }
    auto src = penalty.row(labels[i]);
    std::copy(src.begin(), src.end(), gamma.row(i).begin());
  }
  return RewardMatrix(std::move(gamma), std::move(names));
}

}  // namespace optpolicy
