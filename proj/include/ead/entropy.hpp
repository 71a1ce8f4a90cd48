#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ead/lm.hpp"
#include "ead/types.hpp"

namespace ead {

/// -sum p log p over the finite entries, in nats; lies in [0, log V].
double step_entropy(const VocabLogits& logits);

// ---------------------------------------------------------------------------
// Admissible lookahead-entropy bounds per remaining horizon
// ---------------------------------------------------------------------------

enum class BoundMode { kLoose, kEmpirical };

struct BoundTable {
  BoundMode mode = BoundMode::kLoose;
  int horizon_max = 0;
  std::vector<double> lower;  // index j = remaining horizon, 0..horizon_max
  std::vector<double> upper;

  double width(int j) const { return upper[j] - lower[j]; }
};

/// Loose mode: [0, j log V]. Empirical mode: interval of half-width
/// sqrt(2 eps (j+1)) * (j log V + log(1/eps)) around j * mean_step_entropy,
/// intersected with the loose interval and made monotone in j. Empirical
/// mode requires eps in (0, 1/2] and a mean per-step entropy in [0, log V].
BoundTable build_bound_table(BoundMode mode, int k_max, int vocab,
                             std::optional<double> epsilon_hat = std::nullopt,
                             std::optional<double> mean_step_entropy = std::nullopt);

// ---------------------------------------------------------------------------
// Lookahead-entropy estimators
// ---------------------------------------------------------------------------

struct EntropyEstimate {
  double value = 0.0;
  int horizon = 0;
  int rollouts = 0;
  double lower = 0.0;
  double upper = 0.0;
  int clamp_events = 0;
};

/// K autoregressive rollouts of length `horizon` from prefix+candidate,
/// with the exact conditional entropy recorded at every step. Paths are a
/// pure function of the seed: the token at (path, step) is drawn from a
/// counter-based stream, so re-running with a longer horizon extends the
/// same paths.
struct RolloutBatch {
  std::vector<std::vector<TokenId>> paths;            // sampled continuations
  std::vector<std::vector<double>> step_entropies;    // [K][horizon]
  std::uint64_t seed = 0;
};

/// Deterministic rollout seed for one candidate inside one decoding step.
std::uint64_t rollout_seed(std::uint64_t step_seed, TokenId candidate);

/// Monte Carlo estimate: mean of -log q(path | prefix+candidate) over K
/// rollouts. Unbiased for the joint lookahead entropy.
EntropyEstimate mc_lookahead_entropy(const LanguageModel& model,
                                     const Prefix& prefix, TokenId candidate,
                                     int k, int K, std::uint64_t seed);

/// Rao-Blackwellized estimate: per-step exact conditional entropies averaged
/// over K sampled paths and summed over the horizon. The value is clamped
/// into [lower(k), upper(k)] of `bounds` (loose bounds if none given) and
/// clamp events are counted.
EntropyEstimate rb_lookahead_entropy(const LanguageModel& model,
                                     const Prefix& prefix, TokenId candidate,
                                     int k, int K, std::uint64_t seed,
                                     const BoundTable* bounds = nullptr);

/// Incremental Rao-Blackwellized evaluation for one candidate, extendable to
/// deeper horizons without redrawing earlier steps. Decoding memoizes one of
/// these per surviving candidate.
class LookaheadEvaluator {
 public:
  LookaheadEvaluator(const LanguageModel& model, const Prefix& prefix,
                     TokenId candidate, int k, int K, std::uint64_t seed);

  void advance_to(int h);

  int full_horizon() const { return k_; }
  int evaluated() const { return static_cast<int>(means_.size()); }
  bool touched() const { return evaluated() > 0; }

  /// Mean conditional entropy at step j (1-based); requires advance_to(j).
  double mean_step(int j) const { return means_[j - 1]; }
  /// Sum of mean_step(1..h); requires advance_to(h).
  double partial_sum(int h) const;
  /// Convenience: advance_to(1) then mean_step(1). Exact, path-independent.
  double first_step();

  const RolloutBatch& batch() const { return batch_; }
  long model_calls() const { return model_calls_; }

 private:
  const LanguageModel* model_;
  TokenId candidate_;
  int k_;
  int K_;
  std::uint64_t seed_;
  std::vector<Prefix> paths_;
  std::vector<double> means_;
  RolloutBatch batch_;
  long model_calls_ = 0;
};

/// Decoding's deterministic per-candidate estimate: the exact one-step term
/// plus the rollout remainder clamped into the (k-1)-horizon interval, with
/// the total clamped into the k-horizon interval. Every clamp is monotone,
/// so score brackets computed from clamped endpoints stay admissible.
struct ClampedEstimate {
  double value = 0.0;
  int clamp_events = 0;
};

ClampedEstimate compose_clamped(double first_step, double rest_raw, int k,
                                const BoundTable& bounds);

// ---------------------------------------------------------------------------
// Rollout-horizon selection
// ---------------------------------------------------------------------------

/// Smallest h in [1, k] whose residual entropy swing |alpha| * width(k-h)
/// falls strictly below the score gap (score - threshold). Returns k when the
/// gap is closed by no horizon or is not positive; a threshold of -inf means
/// no competitor, so the shallowest rollout decides.
int get_rollout_horizon(double score, double step_entropy_hint, double alpha,
                        int k, double threshold, const BoundTable& bounds);

// ---------------------------------------------------------------------------
// Estimator comparison
// ---------------------------------------------------------------------------

struct VarianceReport {
  double var_mc = 0.0;
  double var_rb = 0.0;
  double mean_mc = 0.0;
  double mean_rb = 0.0;
  int trials = 0;
};

/// Empirical variance of both estimators over independent trials (shared
/// rollout paths within a trial).
VarianceReport mc_vs_rb_variance(const LanguageModel& model,
                                 const Prefix& prefix, TokenId candidate,
                                 int k, int K, int trials, std::uint64_t seed);

}  // namespace ead
