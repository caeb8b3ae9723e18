#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "optpolicy/forest.hpp"
#include "optpolicy/policy_learner.hpp"
#include "optpolicy/reward_estimation.hpp"
#include "optpolicy/synthetic.hpp"
#include "optpolicy/table_io.hpp"

namespace optpolicy {

enum class BenchMethod { kGreedyPolicy, kOptimalPolicy, kRegressCompare };

inline const char* bench_method_name(BenchMethod m) {
  switch (m) {
    case BenchMethod::kGreedyPolicy: return "greedy-policy";
    case BenchMethod::kOptimalPolicy: return "optimal-policy";
    case BenchMethod::kRegressCompare: return "regress-compare";
  }
  return "?";
}

inline BenchMethod parse_bench_method(const std::string& s) {
  for (auto m : {BenchMethod::kGreedyPolicy, BenchMethod::kOptimalPolicy, BenchMethod::kRegressCompare}) {
    if (s == bench_method_name(m)) return m;
  }
  throw ConfigError("unknown method '" + s + "' (valid: greedy-policy, optimal-policy, regress-compare)");
}

// Experiment designs: binary-1..7, multi-1..2, continuous-1..4, multicontinuous-1..2.
inline std::vector<std::string> design_ids() {
  std::vector<std::string> ids;
  for (int k = 1; k <= 7; ++k) ids.push_back("binary-" + std::to_string(k));
  for (int k = 1; k <= 2; ++k) ids.push_back("multi-" + std::to_string(k));
  for (int k = 1; k <= 4; ++k) ids.push_back("continuous-" + std::to_string(k));
  for (int k = 1; k <= 2; ++k) ids.push_back("multicontinuous-" + std::to_string(k));
  return ids;
}

inline GeneratorSpec design_spec(const std::string& id) {
  using F = FnId;
  using G = GnId;
  GeneratorSpec s;
  auto set_binary = [&](F b, F e) {
    s.family = Family::kBinary;
    s.baseline = b;
    s.effects = {e};
  };
  auto set_multi = [&](F b, F e1, F e2) {
    s.family = Family::kMultiDiscrete;
    s.baseline = b;
    s.effects = {e1, e2};
  };
  if (id == "binary-1") set_binary(F::f5, F::f2);
  else if (id == "binary-2") set_binary(F::f4, F::f3);
  else if (id == "binary-3") set_binary(F::f7, F::f4);
  else if (id == "binary-4") set_binary(F::f3, F::f5);
  else if (id == "binary-5") set_binary(F::f1, F::f6);
  else if (id == "binary-6") set_binary(F::f2, F::f7);
  else if (id == "binary-7") set_binary(F::f6, F::f8);
  else if (id == "multi-1") set_multi(F::f7, F::f4, F::f2);
  else if (id == "multi-2") set_multi(F::f6, F::f2, F::f7);
  else if (id.rfind("continuous-", 0) == 0 && id.size() == 12 && id[11] >= '1' && id[11] <= '4') {
    s.family = Family::kSingleContinuous;
    s.outcomes = {gn_from_int(id[11] - '0')};
  } else if (id == "multicontinuous-1") {
    s.family = Family::kMultiContinuous;
    s.outcomes = {G::g1, G::g2};
  } else if (id == "multicontinuous-2") {
    s.family = Family::kMultiContinuous;
    s.outcomes = {G::g3, G::g4};
  } else {
    std::string valid;
    for (const auto& d : design_ids()) valid += (valid.empty() ? "" : ", ") + d;
    throw ConfigError("unknown design '" + id + "' (valid: " + valid + ")");
  }
  return s;
}

struct ExperimentConfig {
  std::string design = "binary-1";
  std::vector<BenchMethod> methods{BenchMethod::kGreedyPolicy, BenchMethod::kOptimalPolicy,
                                   BenchMethod::kRegressCompare};
  std::vector<std::size_t> n_grid{100, 500, 1000, 2000, 5000};
  std::size_t repetitions = 10;
  std::uint64_t seed = 1;
  std::size_t n_test = 10000;
  double noise_sd = 0.1;

  ForestConfig forest;
  std::size_t k_folds = 5;
  double clip_lo = 0.01;

  // Policy trees are tuned on a validation split unless `tune` is off, in
  // which case `fixed` is used directly.
  TuneGrid grid;
  bool tune = true;
  Hyperparameters fixed;
  std::size_t jobs = 1;
};

struct RegretRow {
  std::string design;
  std::string method;
  std::size_t n = 0;
  std::size_t repetition = 0;
  double regret = 0.0;
  // Penalized training objective of the fitted tree; NaN for regress-compare.
  double train_objective = std::numeric_limits<double>::quiet_NaN();
  int depth = -1;
  double alpha = std::numeric_limits<double>::quiet_NaN();
};

struct SummaryRow {
  std::string design;
  std::string method;
  std::size_t n = 0;
  std::size_t repetitions = 0;
  double mean_regret = 0.0;
  double std_error = 0.0;
  double mean_train_objective = std::numeric_limits<double>::quiet_NaN();
};

struct RegretTable {
  std::vector<RegretRow> rows;

  // Mean and standard error per (method, n), in first-appearance order.
  std::vector<SummaryRow> summary() const {
    std::vector<SummaryRow> out;
    std::map<std::pair<std::string, std::size_t>, std::size_t> slot;
    std::vector<std::vector<const RegretRow*>> groups;
    for (const auto& r : rows) {
      auto key = std::make_pair(r.method, r.n);
      auto it = slot.find(key);
      if (it == slot.end()) {
        it = slot.emplace(key, out.size()).first;
        out.push_back({r.design, r.method, r.n, 0, 0.0, 0.0, 0.0});
        groups.emplace_back();
      }
      groups[it->second].push_back(&r);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
      const auto& rs = groups[g];
      const double k = static_cast<double>(rs.size());
      double sum = 0.0;
      double obj = 0.0;
      for (const auto* r : rs) {
        sum += r->regret;
        obj += r->train_objective;
      }
      const double mean = sum / k;
      double ss = 0.0;
      for (const auto* r : rs) ss += (r->regret - mean) * (r->regret - mean);
      out[g].repetitions = rs.size();
      out[g].mean_regret = mean;
      out[g].std_error = rs.size() > 1 ? std::sqrt(ss / (k - 1) / k) : 0.0;
      out[g].mean_train_objective = obj / k;
    }
    return out;
  }

  const SummaryRow* find(const std::string& method, std::size_t n, const std::vector<SummaryRow>& s) const {
    for (const auto& r : s) {
      if (r.method == method && r.n == n) return &r;
    }
    return nullptr;
  }

  void write_detail(std::ostream& out) const {
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
      cells.push_back({r.design, r.method, std::to_string(r.n), std::to_string(r.repetition), format_double(r.regret),
                       format_double(r.train_objective), std::to_string(r.depth), format_double(r.alpha)});
    }
    write_table(out, {"design", "method", "n", "repetition", "regret", "train_objective", "depth", "alpha"}, cells);
  }

  void write_summary(std::ostream& out) const {
    std::vector<std::vector<std::string>> cells;
    for (const auto& s : summary()) {
      cells.push_back({s.design, s.method, std::to_string(s.n), std::to_string(s.repetitions),
                       format_double(s.mean_regret), format_double(s.std_error)});
    }
    write_table(out, {"design", "method", "n", "repetitions", "mean_regret", "std_error"}, cells);
  }
};

namespace detail {

struct EstimatedProblem {
  RewardMatrix train_rewards;
  // Regress-and-compare predictions on the test features.
  std::vector<std::size_t> regress_compare;
};

inline EstimatedProblem estimate_for_benchmark(const SyntheticProblem& prob, const ExperimentConfig& cfg,
                                               std::uint64_t seed) {
  ForestConfig fc = cfg.forest;
  fc.seed = derive_seed(seed, {0xf0e57u});
  Learners learners = forest_learners(fc);
  EstimatedProblem out;
  if (prob.space.is_discrete()) {
    const std::size_t arms = prob.space.num_candidates();
    PropensityOptions po;
    po.k_folds = cfg.k_folds;
    po.clip_lo = cfg.clip_lo;
    po.seed = fc.seed;
    auto prop = estimate_propensity(prob.train, arms, learners, po);
    auto outc = estimate_outcomes(prob.train, arms, learners, 2 * fc.min_leaf, fc.seed);
    out.train_rewards = doubly_robust_rewards(prob.train, prop, outc, prob.space.candidate_labels());
    MatrixD test_pred(prob.test.features.rows(), arms);
    for (std::size_t t = 0; t < arms; ++t) {
      auto p = outc.models[t](prob.test.features);
      for (std::size_t i = 0; i < p.size(); ++i) test_pred(i, t) = p[i];
    }
    out.regress_compare = rowwise_argmin(test_pred);
  } else {
    DoseModel model = fit_dose_model(prob.train, prob.space, learners, fc.seed);
    out.train_rewards = model.rewards(prob.train.features);
    out.regress_compare = rowwise_argmin(model.rewards(prob.test.features).values);
  }
  return out;
}

}  // namespace detail

inline RegretTable run_experiment(const ExperimentConfig& cfg) {
  GeneratorSpec base = design_spec(cfg.design);
  if (cfg.methods.empty()) throw ConfigError("at least one method is required");
  if (cfg.n_grid.empty() || cfg.repetitions == 0) throw ConfigError("n grid and repetitions must be non-empty");
  if (cfg.tune) cfg.grid.validate();
  base.n_test = cfg.n_test;
  base.noise_sd = cfg.noise_sd;
  const bool discrete = base.family == Family::kBinary || base.family == Family::kMultiDiscrete;
  DesignFunctions fns;
  if (discrete) fns = standardize_design(base, cfg.seed);

  struct Job {
    std::size_t n;
    std::size_t rep;
  };
  std::vector<Job> jobs;
  for (std::size_t n : cfg.n_grid) {
    for (std::size_t r = 0; r < cfg.repetitions; ++r) jobs.push_back({n, r});
  }
  std::vector<std::vector<RegretRow>> results(jobs.size());

  parallel_for(jobs.size(), cfg.jobs, [&](std::size_t j) {
    const Job job = jobs[j];
    GeneratorSpec spec = base;
    spec.n_train = job.n;
    spec.seed = derive_seed(cfg.seed, {job.n, job.rep});
    SyntheticProblem prob = discrete ? generate_discrete(spec, fns) : generate_continuous(spec);
    auto est = detail::estimate_for_benchmark(prob, cfg, spec.seed);

    for (BenchMethod m : cfg.methods) {
      RegretRow row;
      row.design = cfg.design;
      row.method = bench_method_name(m);
      row.n = job.n;
      row.repetition = job.rep;
      if (m == BenchMethod::kRegressCompare) {
        row.regret = mean_regret(est.regress_compare, prob.test);
      } else {
        const TreeMethod tm = m == BenchMethod::kGreedyPolicy ? TreeMethod::kGreedy : TreeMethod::kOptimal;
        PolicyTree tree;
        if (cfg.tune) {
          tree = tune(est.train_rewards, prob.train.features, cfg.grid, derive_seed(spec.seed, {0x70e4u}), tm).tree;
        } else {
          Hyperparameters hp = cfg.fixed;
          hp.seed = derive_seed(spec.seed, {0x70e4u});
          tree = fit_tree(tm, est.train_rewards, prob.train.features, hp);
        }
        row.regret = mean_regret(tree.prescribe(prob.test.features), prob.test);
        row.train_objective =
            penalized_objective(tree, est.train_rewards, prob.train.features, tree.hyperparams.alpha);
        row.depth = tree.hyperparams.max_depth;
        row.alpha = tree.hyperparams.alpha;
      }
      results[j].push_back(row);
    }
  });

  RegretTable table;
  for (auto& r : results) table.rows.insert(table.rows.end(), r.begin(), r.end());
  return table;
}

}  // namespace optpolicy
