#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "optpolicy/core_model.hpp"
#include "optpolicy/random.hpp"

namespace optpolicy {

inline constexpr std::size_t kSyntheticDims = 10;
inline constexpr double kDoseLo = -4.0;
inline constexpr double kDoseHi = 4.0;

// Discrete-treatment building blocks f1..f8 and continuous-treatment outcome
// functions g1..g4. Coordinates are 1-based in the names: x1 is x[0].
enum class FnId : int { f1 = 1, f2, f3, f4, f5, f6, f7, f8 };
enum class GnId : int { g1 = 1, g2, g3, g4 };

inline FnId fn_from_int(int k) {
  if (k < 1 || k > 8) throw ConfigError("unknown function id f" + std::to_string(k) + " (valid: f1..f8)");
  return static_cast<FnId>(k);
}
inline GnId gn_from_int(int k) {
  if (k < 1 || k > 4) throw ConfigError("unknown function id g" + std::to_string(k) + " (valid: g1..g4)");
  return static_cast<GnId>(k);
}

namespace detail {

inline double ind(bool b) { return b ? 1.0 : 0.0; }

inline double f4_value(std::span<const double> x) {
  const double a = x[1], b = x[3], c = x[5];
  return a * b * c + 2 * a * b * (1 - c) + 3 * a * (1 - b) * c + 4 * a * (1 - b) * (1 - c) + 5 * (1 - a) * b * c +
         6 * (1 - a) * b * (1 - c) + 7 * (1 - a) * (1 - b) * c + 8 * (1 - a) * (1 - b) * (1 - c);
}

inline double f5_value(std::span<const double> x) { return x[0] + x[2] + x[4] + x[6] + x[8] - 2.0; }

}  // namespace detail

inline double eval_f(FnId id, std::span<const double> x) {
  using detail::ind;
  if (x.size() != kSyntheticDims) throw InputError("synthetic functions expect 10 features");
  switch (id) {
    case FnId::f1: return 0.0;
    case FnId::f2: return 5.0 * ind(x[0] > 1.0) - 5.0;
    case FnId::f3: return 2.0 * x[0] - 4.0;
    case FnId::f4: return detail::f4_value(x);
    case FnId::f5: return detail::f5_value(x);
    case FnId::f6:
      return 4.0 * ind(x[0] > 1.0) * ind(x[2] > 0.0) + 4.0 * ind(x[4] > 1.0) * ind(x[6] > 0.0) + 2.0 * x[7] * x[8];
    case FnId::f7:
      return 0.5 * (x[0] * x[0] + x[1] + x[2] * x[2] + x[3] + x[4] * x[4] + x[5] + x[6] * x[6] + x[7] +
                    x[8] * x[8] - 11.0);
    case FnId::f8: return (detail::f4_value(x) + detail::f5_value(x)) / std::sqrt(2.0);
  }
  throw ConfigError("unknown function id");
}

inline double eval_g(GnId id, std::span<const double> x, double t) {
  using detail::ind;
  if (x.size() != kSyntheticDims) throw InputError("synthetic functions expect 10 features");
  switch (id) {
    case GnId::g1: return std::abs(x[0] - t);
    case GnId::g2: return x[0] * t;
    case GnId::g3: {
      const double a = x[1], b = x[3], c = x[5];
      return std::abs(t - 4) * a * b * c + std::abs(t - 3) * a * b * (1 - c) + std::abs(t - 2) * a * (1 - b) * c +
             std::abs(t - 1) * a * (1 - b) * (1 - c) + std::abs(t + 1) * (1 - a) * b * c +
             std::abs(t + 2) * (1 - a) * b * (1 - c) + std::abs(t + 3) * (1 - a) * (1 - b) * c +
             std::abs(t + 4) * (1 - a) * (1 - b) * (1 - c);
    }
    case GnId::g4:
      return std::abs(t - 2) * ind(x[0] > 1.0) * ind(x[2] > 0.0) + std::abs(t + 2) * ind(x[4] > 1.0) * ind(x[6] > 0.0) +
             2.0 * std::abs(x[8] - t);
  }
  throw ConfigError("unknown function id");
}

// n x 10 features: x1, x3, ... ~ Normal(0, 1); x2, x4, ... ~ Bernoulli(0.5).
inline MatrixD sample_features(std::size_t n, Rng& rng) {
  MatrixD x(n, kSyntheticDims);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < kSyntheticDims; ++j) x(i, j) = j % 2 == 0 ? normal(rng) : (coin(rng) ? 1.0 : 0.0);
  }
  return x;
}

inline MatrixD sample_features(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0xfea7u});
  return sample_features(n, rng);
}

// x -> (f(x) - mean) / sd with mean and sd estimated on a reference sample.
// A function that is constant on the reference sample maps to 0.
struct Standardized {
  std::function<double(std::span<const double>)> fn;
  double mean = 0.0;
  double sd = 0.0;

  double operator()(std::span<const double> x) const { return sd > 0.0 ? (fn(x) - mean) / sd : 0.0; }
};

inline Standardized standardize(std::function<double(std::span<const double>)> fn, const MatrixD& reference) {
  if (reference.rows() < 2) throw InputError("standardization needs a reference sample");
  const std::size_t n = reference.rows();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = fn(reference.row(i));
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double a : v) ss += (a - mean) * (a - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd <= 1e-12 * (1.0 + std::abs(mean))) sd = 0.0;
  return {std::move(fn), mean, sd};
}

inline Standardized standardize_f(FnId id, const MatrixD& reference) {
  return standardize([id](std::span<const double> x) { return eval_f(id, x); }, reference);
}

inline constexpr std::size_t kReferenceSize = 100000;

// Reference sample drawn from a stream keyed by (seed, function id).
inline Standardized standardize_f(FnId id, std::uint64_t seed, std::size_t reference_size = kReferenceSize) {
  Rng rng = make_rng(seed, {0x5747u, static_cast<std::uint64_t>(id)});
  return standardize_f(id, sample_features(reference_size, rng));
}

// ---------------------------------------------------------------------------
// Problem families

enum class Family { kBinary, kMultiDiscrete, kSingleContinuous, kMultiContinuous };

struct GeneratorSpec {
  Family family = Family::kBinary;
  FnId baseline = FnId::f1;
  std::vector<FnId> effects;     // 1 for binary, 2 for multi-discrete
  std::vector<GnId> outcomes;    // 1 for single, 2 for multi continuous
  std::size_t n_train = 1000;
  std::size_t n_test = 10000;
  double noise_sd = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be >= 0");
    if (n_train < 1 || n_test < 1) throw ConfigError("n_train and n_test must be >= 1");
    const std::size_t want_e = family == Family::kBinary ? 1 : family == Family::kMultiDiscrete ? 2 : 0;
    const std::size_t want_g = family == Family::kSingleContinuous ? 1 : family == Family::kMultiContinuous ? 2 : 0;
    if (effects.size() != want_e || outcomes.size() != want_g) {
      throw ConfigError("generator spec has the wrong number of effect/outcome functions for its family");
    }
  }
};

// Standardized discrete-design functions, shared between train and test draws.
struct DesignFunctions {
  Standardized baseline;
  std::vector<Standardized> effects;
};

inline DesignFunctions standardize_design(const GeneratorSpec& spec, std::uint64_t seed) {
  DesignFunctions fns;
  fns.baseline = standardize_f(spec.baseline, seed);
  for (FnId e : spec.effects) fns.effects.push_back(standardize_f(e, seed));
  return fns;
}

// Ground truth on a test sample. `outcomes` is n_test x T over the
// method-facing candidates; `optimal` is its row-wise argmin.
struct OracleSet {
  MatrixD features;
  MatrixD outcomes;
  std::vector<std::size_t> optimal;
  // Continuous families: true outcome for a feature row and a dose vector.
  std::function<double(std::span<const double>, std::span<const double>)> outcome_fn;
};

struct SyntheticProblem {
  Dataset train;
  TreatmentSpace space;
  OracleSet test;
  // Discrete families only: true assignment probabilities and noise-free
  // potential outcomes of the training rows.
  MatrixD train_propensity;
  MatrixD train_potential;
};

inline std::vector<std::size_t> rowwise_argmin(const MatrixD& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    out[i] = static_cast<std::size_t>(std::min_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

// Noise-free potential outcomes of a discrete design for every row.
inline MatrixD potential_outcomes(const GeneratorSpec& spec, const DesignFunctions& fns, const MatrixD& x) {
  const std::size_t n = x.rows();
  if (spec.family == Family::kBinary) {
    MatrixD y(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      const double b = fns.baseline(x.row(i));
      const double e = fns.effects[0](x.row(i));
      y(i, 0) = b - 0.5 * e;
      y(i, 1) = b + 0.5 * e;
    }
    return y;
  }
  if (spec.family == Family::kMultiDiscrete) {
    MatrixD y(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const double b = fns.baseline(x.row(i));
      y(i, 0) = b;
      y(i, 1) = b + fns.effects[0](x.row(i));
      y(i, 2) = b + fns.effects[1](x.row(i));
    }
    return y;
  }
  throw ConfigError("potential_outcomes needs a discrete family");
}

// Biased assignment probabilities given the "no treatment" outcome y0.
inline std::vector<double> assignment_probabilities(Family family, double y0) {
  if (family == Family::kBinary) {
    const double p1 = 1.0 / (1.0 + std::exp(-y0));  // e^{y0} / (1 + e^{y0})
    return {1.0 - p1, p1};
  }
  const double p0 = 1.0 / (1.0 + std::exp(y0));
  return {p0, 0.5 * (1.0 - p0), 0.5 * (1.0 - p0)};
}

inline SyntheticProblem generate_discrete(const GeneratorSpec& spec, const DesignFunctions& fns) {
  spec.validate();
  if (spec.family != Family::kBinary && spec.family != Family::kMultiDiscrete) {
    throw ConfigError("generate_discrete needs a discrete family");
  }
  const std::size_t arms = spec.family == Family::kBinary ? 2 : 3;
  Rng rng = make_rng(spec.seed, {0x7a1au});
  SyntheticProblem out{Dataset{}, TreatmentSpace::discrete(arms), OracleSet{}, MatrixD{}, MatrixD{}};

  MatrixD x = sample_features(spec.n_train, rng);
  MatrixD y = potential_outcomes(spec, fns, x);
  out.train_propensity = MatrixD(spec.n_train, arms);
  std::vector<std::size_t> z(spec.n_train);
  std::vector<double> obs(spec.n_train);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < spec.n_train; ++i) {
    auto probs = assignment_probabilities(spec.family, y(i, 0));
    std::copy(probs.begin(), probs.end(), out.train_propensity.row(i).begin());
    double u = unif(rng);
    std::size_t arm = arms - 1;
    double acc = 0.0;
    for (std::size_t t = 0; t < arms; ++t) {
      acc += probs[t];
      if (u < acc) {
        arm = t;
        break;
      }
    }
    z[i] = arm;
    obs[i] = y(i, arm) + spec.noise_sd * noise(rng);
  }
  out.train_potential = y;
  out.train = Dataset::discrete(std::move(x), std::move(obs), std::move(z), arms);

  Rng test_rng = make_rng(spec.seed, {0x7e57u});
  out.test.features = sample_features(spec.n_test, test_rng);
  out.test.outcomes = potential_outcomes(spec, fns, out.test.features);
  out.test.optimal = rowwise_argmin(out.test.outcomes);
  return out;
}

inline SyntheticProblem generate_binary(const GeneratorSpec& spec, const DesignFunctions& fns) {
  if (spec.family != Family::kBinary) throw ConfigError("generate_binary needs the binary family");
  return generate_discrete(spec, fns);
}
inline SyntheticProblem generate_binary(const GeneratorSpec& spec) {
  return generate_binary(spec, standardize_design(spec, spec.seed));
}

inline SyntheticProblem generate_multi_discrete(const GeneratorSpec& spec, const DesignFunctions& fns) {
  if (spec.family != Family::kMultiDiscrete) throw ConfigError("generate_multi_discrete needs the multi-discrete family");
  return generate_discrete(spec, fns);
}
inline SyntheticProblem generate_multi_discrete(const GeneratorSpec& spec) {
  return generate_multi_discrete(spec, standardize_design(spec, spec.seed));
}

// Method-facing dose grids: 10 points for one treatment, 6 per treatment for two.
inline TreatmentSpace continuous_space(std::size_t num_doses) {
  const std::size_t per = num_doses == 1 ? 10 : 6;
  std::vector<DoseRange> doses;
  for (std::size_t k = 0; k < num_doses; ++k) {
    doses.push_back({"t" + std::to_string(k + 1), kDoseLo, kDoseHi, even_grid(kDoseLo, kDoseHi, per)});
  }
  return TreatmentSpace::continuous(std::move(doses));
}

inline std::function<double(std::span<const double>, std::span<const double>)> continuous_outcome(
    const std::vector<GnId>& gs) {
  return [gs](std::span<const double> x, std::span<const double> t) {
    double y = 0.0;
    for (std::size_t k = 0; k < gs.size(); ++k) y += eval_g(gs[k], x, t[k]);
    return y;
  };
}

// Softmax over exp(-y) of the candidates; lower outcomes are more likely.
inline std::vector<double> softmax_neg(std::span<const double> y) {
  double lo = *std::min_element(y.begin(), y.end());
  std::vector<double> w(y.size());
  double total = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) total += (w[k] = std::exp(-(y[k] - lo)));
  for (double& v : w) v /= total;
  return w;
}

inline constexpr std::size_t kDoseCandidates = 5;

inline SyntheticProblem generate_continuous(const GeneratorSpec& spec) {
  spec.validate();
  if (spec.family != Family::kSingleContinuous && spec.family != Family::kMultiContinuous) {
    throw ConfigError("generate_continuous needs a continuous family");
  }
  const std::size_t m = spec.outcomes.size();
  auto outcome = continuous_outcome(spec.outcomes);
  TreatmentSpace space = continuous_space(m);
  SyntheticProblem out{Dataset{}, space, OracleSet{}, MatrixD{}, MatrixD{}};

  Rng rng = make_rng(spec.seed, {0xc0a7u});
  MatrixD x = sample_features(spec.n_train, rng);
  MatrixD doses(spec.n_train, m);
  std::vector<double> obs(spec.n_train);
  std::uniform_real_distribution<double> dose(kDoseLo, kDoseHi);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> cand(kDoseCandidates * m);
  std::vector<double> yc(kDoseCandidates);
  for (std::size_t i = 0; i < spec.n_train; ++i) {
    for (std::size_t k = 0; k < kDoseCandidates; ++k) {
      for (std::size_t d = 0; d < m; ++d) cand[k * m + d] = dose(rng);
      yc[k] = outcome(x.row(i), {cand.data() + k * m, m});
    }
    auto w = softmax_neg(yc);
    double u = unif(rng);
    std::size_t pick = kDoseCandidates - 1;
    double acc = 0.0;
    for (std::size_t k = 0; k < kDoseCandidates; ++k) {
      acc += w[k];
      if (u < acc) {
        pick = k;
        break;
      }
    }
    for (std::size_t d = 0; d < m; ++d) doses(i, d) = cand[pick * m + d];
    obs[i] = yc[pick] + spec.noise_sd * noise(rng);
  }
  out.train = Dataset::continuous(std::move(x), std::move(obs), std::move(doses));

  Rng test_rng = make_rng(spec.seed, {0x7e57u});
  out.test.features = sample_features(spec.n_test, test_rng);
  const std::size_t t_count = space.num_candidates();
  std::vector<std::vector<double>> grid(t_count);
  for (std::size_t t = 0; t < t_count; ++t) grid[t] = space.candidate_doses(t);
  out.test.outcomes = MatrixD(spec.n_test, t_count);
  for (std::size_t i = 0; i < spec.n_test; ++i) {
    for (std::size_t t = 0; t < t_count; ++t) out.test.outcomes(i, t) = outcome(out.test.features.row(i), grid[t]);
  }
  out.test.optimal = rowwise_argmin(out.test.outcomes);
  out.test.outcome_fn = outcome;
  return out;
}

inline SyntheticProblem generate(const GeneratorSpec& spec) {
  switch (spec.family) {
    case Family::kBinary: return generate_binary(spec);
    case Family::kMultiDiscrete: return generate_multi_discrete(spec);
    default: return generate_continuous(spec);
  }
}

// (1/n) * sum_i [Y_i(prescribed) - min_t Y_i(t)].
inline double mean_regret(std::span<const std::size_t> prescriptions, const OracleSet& oracle) {
  const std::size_t n = oracle.outcomes.rows();
  if (prescriptions.size() != n) {
    throw InputError("prescription count " + std::to_string(prescriptions.size()) + " does not match oracle rows " +
                     std::to_string(n));
  }
  if (n == 0) throw InputError("oracle has no rows");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (prescriptions[i] >= oracle.outcomes.cols()) {
      throw InputError("prescription at row " + std::to_string(i) + " indexes a missing treatment");
    }
    auto r = oracle.outcomes.row(i);
    total += r[prescriptions[i]] - *std::min_element(r.begin(), r.end());
  }
  return total / static_cast<double>(n);
}

}  // namespace optpolicy
