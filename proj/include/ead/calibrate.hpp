#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ead/lm.hpp"
#include "ead/types.hpp"

namespace ead {

/// Held-out mean lookahead entropy: the moment the tilt is matched against.
struct MomentTarget {
  double mu_p = 0.0;
  long n_samples = 0;
  double std_err = 0.0;
};

/// Mean lookahead entropy of realized next tokens along held-out prefixes,
/// estimated with the Rao-Blackwellized estimator and normalized per token.
MomentTarget estimate_mu_p(const LanguageModel& model,
                           const std::vector<Prefix>& heldout, int k, int K,
                           std::uint64_t seed);

/// Cached per-position samples so one rollout set can be reweighted across
/// many alpha values (common random numbers keep the moment curve exactly
/// monotone for the bisection).
struct MomentSamples {
  struct Item {
    double base_weight = 1.0;  // proposal mass (exact mode) or 1 (sampled)
    double entropy = 0.0;      // lookahead estimate for this candidate
  };
  std::vector<std::vector<Item>> positions;
  bool exact = false;
  long total_draws = 0;
};

/// Positions come from the sequences' prefixes; candidate next tokens are
/// enumerated over the vocabulary when n_draws == 0 (exact mode) or sampled
/// n_draws times from the untilted model.
MomentSamples collect_moment_samples(const LanguageModel& model,
                                     const std::vector<Prefix>& sequences,
                                     int k, int K, int n_draws,
                                     std::uint64_t seed);

struct MuAlpha {
  double value = 0.0;
  double ess_fraction = 1.0;  // mean per-position ESS / draws
  bool low_ess = false;
  double std_err = 0.0;
};

/// Self-normalized reweighting of the cached samples by exp(-alpha * H).
MuAlpha mu_alpha_from_samples(const MomentSamples& samples, double alpha);

/// E_{tilted}[H] via importance sampling from the untilted model:
/// E_q[H e^{-aH}] / E_q[e^{-aH}] per position, averaged. Requires
/// n_rollouts >= 2; flags low effective sample size.
MuAlpha estimate_mu_alpha(const LanguageModel& model,
                          const std::vector<Prefix>& prompts, double alpha,
                          int k, int K, int n_rollouts, std::uint64_t seed);

struct FitOptions {
  double tol = 1e-3;  // nats, on the moment gap
  std::pair<double, double> bracket = {-2.0, 2.0};
  double bracket_cap = 32.0;
  int max_iterations = 200;
  int n_draws = 0;  // 0: exact enumeration over the vocabulary
};

struct CalibrationResult {
  double alpha_star = 0.0;
  std::pair<double, double> bracket = {0.0, 0.0};
  std::vector<std::pair<double, double>> trace;  // (alpha, g-hat)
  double tol = 0.0;
  int iterations = 0;
  bool degenerate = false;
  double mu_p = 0.0;
  double mu_p_std_err = 0.0;
  double mu_at_alpha_star = 0.0;
  double std_err_combined = 0.0;
  /// Moment gap re-estimated with fresh rollouts at alpha_star.
  double validation_gap = 0.0;
  bool low_ess = false;
};

/// Monotone bisection on g(alpha) = mu_p - mu_alpha. The bracket expands
/// geometrically up to the cap when g does not change sign; a constant-zero
/// g is flagged degenerate and resolves to alpha 0. Prompts, when non-empty,
/// supply the prefixes used for the tilted moment; held-out prefixes are
/// used otherwise. Throws CalibrationError when no root is bracketed.
CalibrationResult fit_alpha(const LanguageModel& model,
                            const std::vector<Prefix>& heldout,
                            const std::vector<Prefix>& prompts, int k, int K,
                            const FitOptions& options, std::uint64_t seed);

/// Held-out cross-entropy (nats per token) under the per-step tilted model.
/// The per-step partition function is an exact vocabulary sum when
/// V <= exact_vocab_cap, otherwise a Monte Carlo estimate with z_draws
/// samples.
double cross_entropy_of_tilted(const LanguageModel& model,
                               const std::vector<Prefix>& heldout,
                               double alpha, int k, int K, std::uint64_t seed,
                               int exact_vocab_cap = 4096, int z_draws = 64);

}  // namespace ead
