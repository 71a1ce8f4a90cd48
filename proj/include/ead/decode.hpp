#pragma once

#include <cstdint>
#include <vector>

#include "ead/entropy.hpp"
#include "ead/lm.hpp"
#include "ead/types.hpp"

namespace ead {

struct EadConfig {
  double alpha = 0.0;
  int lookahead = 1;   // k
  int rollouts = 2;    // K per lookahead estimate
  int block_size = 4;  // candidates uncovered per block
  BoundTable bounds;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-step outcome and bookkeeping of the race.
struct StepResult {
  TokenId token = -1;
  /// Candidates whose rollout-based lookahead estimate was computed
  /// (memoized once per candidate within the step).
  int evals_used = 0;
  /// Candidates whose exact one-step entropy was computed while tightening.
  int one_step_evals = 0;
  int candidates_initial = 0;
  int survivors_after_gap = 0;
  int blocks_processed = 0;
  /// Block stopping rule never separated the leaders; every survivor was
  /// evaluated at the full horizon.
  bool full_eval_fallback = false;
  int clamp_events = 0;
  double chosen_logprob = 0.0;
  /// Entropy of the model's conditional at the current prefix.
  double pre_step_entropy = 0.0;
  /// Entropy of the conditional after appending the chosen token.
  double step_entropy_of_choice = 0.0;
};

/// One decoding step: argmax_i { logit_i + G_i - alpha * H_i } where H_i is
/// the deterministic clamped lookahead estimate for this step's seeds.
/// Matches exhaustive_step token-for-token under the same config.
StepResult ead_step(const LanguageModel& model, const Prefix& prefix,
                    const EadConfig& config);

/// Reference path: evaluates every finite candidate at the full horizon and
/// takes the argmax directly. Shares the noise and rollout seeds with
/// ead_step but none of its pruning machinery.
StepResult exhaustive_step(const LanguageModel& model, const Prefix& prefix,
                           const EadConfig& config);

/// The tilted next-token law induced by the step's deterministic entropy
/// estimates: p_i proportional to q_i * exp(-alpha * H_i).
std::vector<double> tilted_step_distribution(const LanguageModel& model,
                                             const Prefix& prefix,
                                             const EadConfig& config);

// Race-stage helpers, exposed for direct testing.

/// |alpha| * (upper(k) - lower(k)): a candidate this far below the
/// front-runner cannot win even at the most favorable entropies.
double prune_width(double alpha, const BoundTable& bounds, int k);

/// Keeps ids whose perturbed score is within `width` of the front-runner
/// (the front-runner itself always survives).
std::vector<TokenId> prune_by_gap(const std::vector<TokenId>& ids,
                                  const std::vector<double>& perturbed,
                                  double width);

/// Most favorable score contribution of the k-1 remaining steps,
/// max{-alpha * upper(k-1), -alpha * lower(k-1)}; admissible for either
/// sign of alpha.
double best_case_remaining(double alpha, const BoundTable& bounds, int k);

// ---------------------------------------------------------------------------
// Autoregressive loop
// ---------------------------------------------------------------------------

struct GenerationTrace {
  std::vector<StepResult> steps;
  std::vector<TokenId> tokens;
  std::uint64_t seed = 0;
  bool hit_stop_token = false;
  bool hit_context_limit = false;

  long total_evals() const;
  double mean_evals() const;
  int total_clamp_events() const;
};

/// Runs ead_step autoregressively; the per-step seed is derived from
/// (config.seed, step index), so traces are reproducible from the seed.
GenerationTrace generate(const LanguageModel& model, const Prefix& prompt,
                         const EadConfig& config, int max_tokens,
                         const std::vector<TokenId>& stop_tokens = {});

}  // namespace ead
