#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "optpolicy/benchmark.hpp"
#include "optpolicy/forest.hpp"
#include "optpolicy/policy_learner.hpp"
#include "optpolicy/reward_estimation.hpp"
#include "optpolicy/synthetic.hpp"
#include "optpolicy/table_io.hpp"
#include "optpolicy/tree_io.hpp"

namespace optpolicy::cli {

using Record = nlohmann::ordered_json;

// Line-delimited JSON report. Empty path discards records.
class Report {
 public:
  explicit Report(const std::string& path) {
    if (!path.empty()) {
      out_.open(path);
      if (!out_) throw InputError("cannot write report " + path);
    }
  }
  void write(const Record& r) {
    if (out_.is_open()) out_ << r.dump() << '\n';
  }

 private:
  std::ofstream out_;
};

struct ForestFlags {
  std::size_t trees = 100;
  std::size_t depth = 12;
  std::size_t min_leaf = 5;
  std::size_t mtry = 0;

  void add(CLI::App* app) {
    app->add_option("--trees", trees, "trees per forest")->check(CLI::PositiveNumber);
    app->add_option("--forest-depth", depth, "maximum depth of forest trees")->check(CLI::PositiveNumber);
    app->add_option("--forest-min-leaf", min_leaf, "minimum rows per forest leaf")->check(CLI::PositiveNumber);
    app->add_option("--mtry", mtry, "features tried per split (0 = default)");
  }
  ForestConfig config(std::uint64_t seed, std::size_t jobs) const {
    ForestConfig c;
    c.n_trees = trees;
    c.max_depth = depth;
    c.min_leaf = min_leaf;
    c.mtry = mtry;
    c.seed = seed;
    c.jobs = jobs;
    return c;
  }
};

inline bool parse_number(const std::string& s, double& v) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

// `name:lo:hi:count`
inline DoseRange parse_dose(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  double lo = 0.0;
  double hi = 0.0;
  double count = 0.0;
  if (parts.size() != 4 || parts[0].empty() || !parse_number(parts[1], lo) || !parse_number(parts[2], hi) ||
      !parse_number(parts[3], count) || count < 1 || count != std::floor(count)) {
    throw ConfigError("--doses expects name:lo:hi:gridsize, got '" + spec + "'");
  }
  if (!(lo < hi)) throw ConfigError("--doses " + parts[0] + ": lo must be below hi");
  return DoseRange{parts[0], lo, hi, even_grid(lo, hi, static_cast<std::size_t>(count))};
}

// Maps a label column onto arm indices. Without declared labels the distinct
// values are used, sorted numerically when they are all numbers.
inline std::vector<std::size_t> encode_labels(const Table& table, const std::string& column,
                                              std::vector<std::string>& labels) {
  const std::size_t j = table.require(column);
  if (labels.empty()) {
    std::set<std::string> seen;
    for (const auto& r : table.rows) seen.insert(r[j]);
    labels.assign(seen.begin(), seen.end());
    bool numeric = true;
    double v = 0.0;
    for (const auto& l : labels) numeric = numeric && parse_number(l, v);
    if (numeric) {
      std::sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
        double x = 0.0;
        double y = 0.0;
        parse_number(a, x);
        parse_number(b, y);
        return x < y;
      });
    }
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t t = 0; t < labels.size(); ++t) index.emplace(labels[t], t);
  std::vector<std::size_t> arms(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    auto it = index.find(table.rows[i][j]);
    if (it == index.end()) {
      throw ParseError(table.source + ": undeclared treatment label '" + table.rows[i][j] + "' at line " +
                       std::to_string(i + 2) + ", column '" + column + "'");
    }
    arms[i] = it->second;
  }
  return arms;
}

inline std::ostream& open_output(const std::string& path, std::ofstream& file, std::ostream& fallback) {
  if (path.empty() || path == "-") return fallback;
  file.open(path);
  if (!file) throw InputError("cannot write " + path);
  return file;
}

inline std::vector<std::string> or_all_columns(const std::vector<std::string>& features, const Table& t) {
  return features.empty() ? t.header : features;
}

// ---------------------------------------------------------------------------
// estimate-rewards

struct EstimateOptions {
  std::string data;
  std::vector<std::string> features;
  std::string treatment;
  std::string outcome;
  std::vector<std::string> treatment_labels;
  std::vector<std::string> doses;
  std::string mode;
  std::string penalty;
  bool maximize = false;
  std::size_t folds = 5;
  double clip_lo = 0.01;
  ForestFlags forest;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::string out;
  std::string report;
};

inline void cmd_estimate_rewards(const EstimateOptions& o, std::ostream& out) {
  Report report(o.report);
  const Table table = read_table(o.data);
  if (o.features.empty()) throw ConfigError("--features is required");
  const MatrixD x = table.numeric_columns(o.features);

  std::string mode = o.mode;
  if (mode.empty()) mode = o.doses.empty() ? "dr" : "continuous";
  if (mode != "dr" && mode != "continuous" && mode != "binary" && mode != "penalty") {
    throw ConfigError("--mode must be one of dr, continuous, binary, penalty");
  }
  if ((mode == "continuous") && o.doses.empty()) throw ConfigError("--mode continuous needs at least one --doses");
  if ((mode == "dr" || mode == "penalty") && !o.doses.empty()) {
    throw ConfigError("--doses cannot be combined with --mode " + mode);
  }
  if (o.doses.empty() && o.treatment.empty()) throw ConfigError("--treatment is required for discrete treatments");
  if (mode != "penalty" && o.outcome.empty()) throw ConfigError("--outcome is required");
  if (mode == "penalty" && o.maximize) throw ConfigError("--maximize does not apply to penalty mode");

  const ForestConfig fc = o.forest.config(derive_seed(o.seed, {0xe57u}), o.jobs);
  const Learners learners = forest_learners(fc);
  Record cfg{{"event", "config"}, {"command", "estimate-rewards"}, {"mode", mode}, {"seed", o.seed},
             {"rows", table.size()},  {"features", o.features},       {"maximize", o.maximize},
             {"trees", fc.n_trees}};
  report.write(cfg);

  RewardMatrix rewards;
  if (mode == "penalty") {
    std::vector<std::string> labels = o.treatment_labels;
    auto arms = encode_labels(table, o.treatment, labels);
    if (o.penalty.empty()) throw ConfigError("--mode penalty needs --penalty");
    const Table pt = read_table(o.penalty);
    MatrixD l = pt.numeric_columns(labels);
    if (l.rows() != labels.size()) {
      throw InputError(o.penalty + ": expected " + std::to_string(labels.size()) + " rows, one per class");
    }
    rewards = penalty_rewards(arms, l, labels);
  } else {
    std::vector<double> y = table.numeric_column(o.outcome);
    if (o.maximize && mode != "binary") {
      for (double& v : y) v = -v;
    }
    if (!o.doses.empty()) {
      std::vector<DoseRange> ranges;
      std::vector<std::string> cols;
      for (const auto& d : o.doses) {
        ranges.push_back(parse_dose(d));
        cols.push_back(ranges.back().name);
      }
      const TreatmentSpace space = TreatmentSpace::continuous(ranges);
      Dataset ds = Dataset::continuous(x, y, table.numeric_columns(cols), o.features);
      rewards = mode == "binary" ? binary_outcome_rewards(ds, space, learners, fc.seed)
                                 : continuous_dose_rewards(ds, space, learners, fc.seed);
      report.write({{"event", "doses"}, {"candidates", space.num_candidates()}, {"labels", space.candidate_labels()}});
    } else {
      std::vector<std::string> labels = o.treatment_labels;
      auto arms = encode_labels(table, o.treatment, labels);
      const TreatmentSpace space = TreatmentSpace::discrete(labels);
      Dataset ds = Dataset::discrete(x, y, arms, labels.size(), o.features);
      std::vector<std::size_t> sizes(labels.size(), 0);
      for (auto a : arms) ++sizes[a];
      report.write({{"event", "arms"}, {"labels", labels}, {"sizes", sizes}});
      if (mode == "binary") {
        rewards = binary_outcome_rewards(ds, space, learners, fc.seed);
      } else {
        PropensityOptions po;
        po.k_folds = o.folds;
        po.clip_lo = o.clip_lo;
        po.seed = fc.seed;
        po.jobs = o.jobs;
        auto prop = estimate_propensity(ds, labels.size(), learners, po);
        auto outc = estimate_outcomes(ds, labels.size(), learners, 2 * fc.min_leaf, fc.seed, o.jobs);
        rewards = doubly_robust_rewards(ds, prop, outc, labels);
        std::vector<std::size_t> fold_sizes(o.folds, 0);
        for (auto f : prop.folds) ++fold_sizes[f];
        report.write({{"event", "propensity"},
                      {"folds", o.folds},
                      {"fold_sizes", fold_sizes},
                      {"clip_lo", prop.clip_lo},
                      {"clip_hi", prop.clip_hi},
                      {"clipped_entries", prop.clipped_entries}});
      }
    }
    if (o.maximize && mode == "binary") rewards = rewards.negated();
  }

  std::ofstream file;
  write_reward_table(open_output(o.out, file, out), rewards);
  report.write({{"event", "rewards"}, {"rows", rewards.rows()}, {"columns", rewards.num_treatments()}});
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data;
  std::vector<std::string> features;
  std::string rewards;
  std::string method = "optimal";
  int depth = 2;
  double alpha = 0.0;
  std::size_t min_leaf = 1;
  std::size_t restarts = 100;
  std::uint64_t seed = 1;
  bool tune = false;
  std::vector<int> depths{1, 2, 3, 4, 5};
  std::vector<double> alphas{0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  double validation_fraction = 0.3;
  std::size_t jobs = 1;
  std::string out;
  std::string report;
};

inline TreeMethod parse_tree_method(const std::string& s) {
  for (auto m : {TreeMethod::kGreedy, TreeMethod::kOptimal, TreeMethod::kExhaustive}) {
    if (s == method_name(m)) return m;
  }
  throw ConfigError("--method must be one of greedy, optimal, exhaustive");
}

inline void cmd_train(const TrainOptions& o, std::ostream& out) {
  Report report(o.report);
  const TreeMethod method = parse_tree_method(o.method);
  const Table table = read_table(o.data);
  const auto names = or_all_columns(o.features, table);
  const MatrixD x = table.numeric_columns(names);
  const RewardMatrix rewards = read_reward_table(o.rewards);
  if (rewards.rows() != x.rows()) {
    throw InputError("rewards have " + std::to_string(rewards.rows()) + " rows but data has " +
                     std::to_string(x.rows()));
  }
  report.write({{"event", "config"},
                {"command", "train"},
                {"method", o.method},
                {"seed", o.seed},
                {"rows", x.rows()},
                {"features", names},
                {"treatments", rewards.labels},
                {"tune", o.tune}});

  Hyperparameters hp;
  hp.max_depth = o.depth;
  hp.alpha = o.alpha;
  hp.min_leaf = o.min_leaf;
  hp.restarts = o.restarts;
  hp.seed = o.seed;
  std::optional<double> validation_score;
  if (o.tune) {
    TuneGrid grid;
    grid.depths = o.depths;
    grid.alphas = o.alphas;
    grid.validation_fraction = o.validation_fraction;
    grid.min_leaf = o.min_leaf;
    grid.restarts = o.restarts;
    TuneResult tr = tune(rewards, x, grid, o.seed, method, names, o.jobs);
    for (std::size_t c = 0; c < tr.cells.size(); ++c) {
      const auto& cell = tr.cells[c];
      report.write({{"event", "tune_cell"},
                    {"depth", cell.depth},
                    {"alpha", cell.alpha},
                    {"validation_score", cell.validation_score},
                    {"validation_se", cell.validation_se},
                    {"branches", cell.branches},
                    {"selected", c == tr.selected}});
    }
    hp = tr.hp;
    validation_score = tr.cells[tr.selected].validation_score;
  }
  hp.validate();

  PolicyTree tree;
  if (method == TreeMethod::kOptimal) {
    OptimalFit fit = fit_optimal_traced(rewards, x, hp, names, o.jobs);
    for (const auto& tr : fit.traces) {
      report.write({{"event", "restart"},
                    {"restart", tr.restart},
                    {"init", tr.init},
                    {"objectives", tr.objectives},
                    {"sweeps", tr.sweeps}});
    }
    report.write({{"event", "best_restart"}, {"restart", fit.best_restart}});
    tree = std::move(fit.tree);
  } else {
    tree = fit_tree(method, rewards, x, hp, names);
  }
  const double penalized = penalized_objective(tree, rewards, x, hp.alpha);
  Record result{{"event", "result"},
                {"objective_train", tree.objective_train},
                {"penalized_objective", penalized},
                {"max_depth", hp.max_depth},
                {"alpha", hp.alpha},
                {"min_leaf", hp.min_leaf},
                {"branches", tree.num_branches()},
                {"depth", tree.depth()}};
  if (validation_score) result["validation_objective"] = *validation_score;
  report.write(result);

  std::ofstream file;
  open_output(o.out, file, out) << serialize_tree(tree);
  if (!o.out.empty() && o.out != "-") {
    out << "objective_train=" << format_double(tree.objective_train)
        << " penalized_objective=" << format_double(penalized) << " branches=" << tree.num_branches() << '\n';
  }
}

// ---------------------------------------------------------------------------
// prescribe and show

struct PrescribeOptions {
  std::string tree;
  std::string data;
  bool explain = false;
  std::string out;
};

inline std::string explain_path(const PolicyTree& tree, std::span<const double> x) {
  std::string s;
  for (const auto& step : tree.path(x)) {
    if (!s.empty()) s += ';';
    s += tree.feature_names[step.feature] + "<" + format_number(step.threshold) + ":" +
         (step.went_left ? "left" : "right");
  }
  return s;
}

inline void cmd_prescribe(const PrescribeOptions& o, std::ostream& out) {
  const PolicyTree tree = load_tree(o.tree);
  const Table table = read_table(o.data);
  const MatrixD x = table.numeric_columns(tree.feature_names);
  const auto z = tree.prescribe(x);
  std::vector<std::vector<std::string>> rows(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    rows[i] = {std::to_string(i), tree.treatment_labels[z[i]]};
    if (o.explain) rows[i].push_back(explain_path(tree, x.row(i)));
  }
  std::vector<std::string> header{"row", "treatment"};
  if (o.explain) header.push_back("path");
  std::ofstream file;
  write_table(open_output(o.out, file, out), header, rows);
}

inline void render_node(const PolicyTree& tree, std::size_t id, int indent, std::ostream& out) {
  const Node& n = tree.nodes[id];
  out << std::string(static_cast<std::size_t>(indent) * 2, ' ');
  if (n.leaf) {
    out << "prescribe " << tree.treatment_labels[n.treatment] << " (n=" << n.n_train << ")\n";
    return;
  }
  out << tree.feature_names[n.feature] << " < " << format_number(n.threshold) << '\n';
  render_node(tree, n.left, indent + 1, out);
  render_node(tree, n.right, indent + 1, out);
}

// Left child first; the left subtree holds rows satisfying the test.
inline std::string render_tree(const PolicyTree& tree) {
  std::ostringstream s;
  render_node(tree, 0, 0, s);
  return s.str();
}

// ---------------------------------------------------------------------------
// benchmark and generate

struct BenchmarkOptions {
  std::string design;
  std::vector<std::size_t> n{100, 500, 1000, 2000, 5000};
  std::size_t reps = 10;
  std::vector<std::string> methods{"greedy-policy", "optimal-policy", "regress-compare"};
  std::uint64_t seed = 1;
  std::size_t n_test = 10000;
  double noise = 0.1;
  ForestFlags forest;
  std::size_t restarts = 20;
  std::vector<int> depths{1, 2, 3, 4};
  std::vector<double> alphas{0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  bool no_tune = false;
  int depth = 2;
  double alpha = 0.0;
  std::size_t jobs = 1;
  std::string out;
  std::string summary;
};

inline void cmd_benchmark(const BenchmarkOptions& o, std::ostream& out) {
  ExperimentConfig cfg;
  cfg.design = o.design;
  cfg.methods.clear();
  for (const auto& m : o.methods) cfg.methods.push_back(parse_bench_method(m));
  cfg.n_grid = o.n;
  cfg.repetitions = o.reps;
  cfg.seed = o.seed;
  cfg.n_test = o.n_test;
  cfg.noise_sd = o.noise;
  cfg.forest = o.forest.config(o.seed, 1);
  cfg.grid.depths = o.depths;
  cfg.grid.alphas = o.alphas;
  cfg.grid.restarts = o.restarts;
  cfg.tune = !o.no_tune;
  cfg.fixed.max_depth = o.depth;
  cfg.fixed.alpha = o.alpha;
  cfg.fixed.restarts = o.restarts;
  cfg.jobs = o.jobs;
  RegretTable table = run_experiment(cfg);
  std::ofstream file;
  table.write_detail(open_output(o.out, file, out));
  if (!o.summary.empty()) {
    std::ofstream s(o.summary);
    if (!s) throw InputError("cannot write " + o.summary);
    table.write_summary(s);
  }
}

struct GenerateOptions {
  std::string design;
  std::size_t n = 200;
  std::uint64_t seed = 1;
  double noise = 0.1;
  std::string out;
};

// Writes the training sample of a synthetic design: x1..x10, the treatment
// column `z` (arm index) or dose columns t1.., and the outcome `y`.
inline void cmd_generate(const GenerateOptions& o, std::ostream& out) {
  GeneratorSpec spec = design_spec(o.design);
  spec.n_train = o.n;
  spec.n_test = 1;
  spec.noise_sd = o.noise;
  spec.seed = o.seed;
  const SyntheticProblem prob = generate(spec);
  const Dataset& ds = prob.train;
  std::vector<std::string> header = ds.feature_names;
  if (ds.is_discrete()) {
    header.push_back("z");
  } else {
    for (std::size_t k = 0; k < ds.doses.cols(); ++k) header.push_back("t" + std::to_string(k + 1));
  }
  header.push_back("y");
  std::vector<std::vector<std::string>> rows(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) rows[i].push_back(format_double(v));
    if (ds.is_discrete()) {
      rows[i].push_back(std::to_string(ds.arms[i]));
    } else {
      for (double v : ds.doses.row(i)) rows[i].push_back(format_double(v));
    }
    rows[i].push_back(format_double(ds.outcomes[i]));
  }
  std::ofstream file;
  write_table(open_output(o.out, file, out), header, rows);
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Learn and apply tree-structured treatment policies", "optpolicy"};
  app.set_config("--config", "", "TOML configuration file mirroring the flags");
  app.require_subcommand(1);

  EstimateOptions est;
  auto* e = app.add_subcommand("estimate-rewards", "estimate the n x T reward table");
  e->add_option("--data", est.data, "input table")->required();
  e->add_option("--features", est.features, "feature columns")->delimiter(',');
  e->add_option("--treatment", est.treatment, "discrete treatment column");
  e->add_option("--outcome", est.outcome, "outcome column");
  e->add_option("--treatment-labels", est.treatment_labels, "declared treatment labels in order")->delimiter(',');
  e->add_option("--doses", est.doses, "continuous dose name:lo:hi:gridsize (repeatable)");
  e->add_option("--mode", est.mode, "dr, continuous, binary or penalty");
  e->add_option("--penalty", est.penalty, "penalty matrix table for penalty mode");
  e->add_flag("--maximize", est.maximize, "higher outcomes are better");
  e->add_option("--folds", est.folds, "cross-fitting folds")->check(CLI::Range(2, 1000));
  e->add_option("--clip-lo", est.clip_lo, "lower propensity bound")->check(CLI::Range(0.0, 0.5));
  est.forest.add(e);
  e->add_option("--seed", est.seed, "random seed");
  e->add_option("--jobs", est.jobs, "worker threads")->check(CLI::PositiveNumber);
  e->add_option("--out", est.out, "reward table output");
  e->add_option("--report", est.report, "JSON lines report");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "fit a policy tree on a reward table");
  t->add_option("--data", tr.data, "feature table")->required();
  t->add_option("--features", tr.features, "feature columns (default: all)")->delimiter(',');
  t->add_option("--rewards", tr.rewards, "reward table")->required();
  t->add_option("--method", tr.method, "greedy, optimal or exhaustive");
  t->add_option("--depth", tr.depth, "maximum depth")->check(CLI::NonNegativeNumber);
  t->add_option("--alpha", tr.alpha, "complexity penalty per split")->check(CLI::NonNegativeNumber);
  t->add_option("--min-leaf", tr.min_leaf, "minimum rows per leaf")->check(CLI::PositiveNumber);
  t->add_option("--restarts", tr.restarts, "local-search restarts")->check(CLI::PositiveNumber);
  t->add_option("--seed", tr.seed, "random seed");
  t->add_flag("--tune", tr.tune, "select depth and alpha on a validation split");
  t->add_option("--depths", tr.depths, "depth grid for --tune")->delimiter(',');
  t->add_option("--alphas", tr.alphas, "alpha grid for --tune")->delimiter(',');
  t->add_option("--validation-fraction", tr.validation_fraction, "held-out share for --tune");
  t->add_option("--jobs", tr.jobs, "worker threads")->check(CLI::PositiveNumber);
  t->add_option("--out", tr.out, "tree document output");
  t->add_option("--report", tr.report, "JSON lines report");

  PrescribeOptions pr;
  auto* p = app.add_subcommand("prescribe", "apply a tree to new rows");
  p->add_option("--tree", pr.tree, "tree document")->required();
  p->add_option("--data", pr.data, "feature table")->required();
  p->add_flag("--explain", pr.explain, "add the root-to-leaf path");
  p->add_option("--out", pr.out, "prescriptions output");

  std::string show_tree;
  auto* s = app.add_subcommand("show", "print a tree");
  s->add_option("--tree", show_tree, "tree document")->required();

  BenchmarkOptions bo;
  auto* b = app.add_subcommand("benchmark", "run a synthetic experiment");
  b->add_option("--design", bo.design, "design id")->required();
  b->add_option("--n", bo.n, "training sizes")->delimiter(',');
  b->add_option("--reps", bo.reps, "repetitions")->check(CLI::PositiveNumber);
  b->add_option("--methods", bo.methods, "greedy-policy, optimal-policy, regress-compare")->delimiter(',');
  b->add_option("--seed", bo.seed, "random seed");
  b->add_option("--n-test", bo.n_test, "test rows")->check(CLI::PositiveNumber);
  b->add_option("--noise", bo.noise, "outcome noise sd")->check(CLI::NonNegativeNumber);
  bo.forest.add(b);
  b->add_option("--restarts", bo.restarts, "local-search restarts")->check(CLI::PositiveNumber);
  b->add_option("--depths", bo.depths, "depth grid")->delimiter(',');
  b->add_option("--alphas", bo.alphas, "alpha grid")->delimiter(',');
  b->add_flag("--no-tune", bo.no_tune, "use --depth and --alpha instead of tuning");
  b->add_option("--depth", bo.depth, "depth without tuning")->check(CLI::NonNegativeNumber);
  b->add_option("--alpha", bo.alpha, "alpha without tuning")->check(CLI::NonNegativeNumber);
  b->add_option("--jobs", bo.jobs, "worker threads")->check(CLI::PositiveNumber);
  b->add_option("--out", bo.out, "detail table output");
  b->add_option("--summary", bo.summary, "summary table output");

  GenerateOptions go;
  auto* g = app.add_subcommand("generate", "write a synthetic training sample");
  g->add_option("--design", go.design, "design id")->required();
  g->add_option("--n", go.n, "rows")->check(CLI::PositiveNumber);
  g->add_option("--seed", go.seed, "random seed");
  g->add_option("--noise", go.noise, "outcome noise sd")->check(CLI::NonNegativeNumber);
  g->add_option("--out", go.out, "output table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    int code = app.exit(ex, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*e) cmd_estimate_rewards(est, out);
    if (*t) cmd_train(tr, out);
    if (*p) cmd_prescribe(pr, out);
    if (*s) out << render_tree(load_tree(show_tree));
    if (*b) cmd_benchmark(bo, out);
    if (*g) cmd_generate(go, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return static_cast<int>(ex.code());
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << '\n';
    return static_cast<int>(ExitCode::kInternal);
  }
  return 0;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"optpolicy"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace optpolicy::cli
