#include "ead/entropy.hpp"

#include <algorithm>
#include <cmath>

#include "ead/rng.hpp"

namespace ead {

double step_entropy(const VocabLogits& logits) {
  validate_logits(logits);
  double lse = log_sum_exp(logits.values);
  double h = 0.0;
  for (double v : logits.values) {
    if (!std::isfinite(v)) continue;
    double lp = v - lse;
    h -= std::exp(lp) * lp;
  }
  return std::max(h, 0.0);
}

// ---------------------------------------------------------------------------
// Bound tables
// ---------------------------------------------------------------------------

BoundTable build_bound_table(BoundMode mode, int k_max, int vocab,
                             std::optional<double> epsilon_hat,
                             std::optional<double> mean_step_entropy) {
  if (k_max < 0) throw ConfigError("bound table horizon must be >= 0");
  if (vocab < 2) throw ConfigError("bound table vocab must be >= 2");
  double log_v = std::log(static_cast<double>(vocab));

  BoundTable table;
  table.mode = mode;
  table.horizon_max = k_max;
  table.lower.assign(k_max + 1, 0.0);
  table.upper.assign(k_max + 1, 0.0);

  if (mode == BoundMode::kLoose) {
    for (int j = 0; j <= k_max; ++j) {
      table.upper[j] = j * log_v;
    }
    return table;
  }

  if (!epsilon_hat || !mean_step_entropy) {
    throw ConfigError("empirical bounds need epsilon_hat and mean step entropy");
  }
  double eps = *epsilon_hat;
  double hbar = *mean_step_entropy;
  // The relaxation -log(1-eps) <= 2 eps behind the half-width formula is
  // valid only for eps in (0, 1/2].
  if (!(eps > 0.0 && eps <= 0.5)) {
    throw ConfigError("epsilon_hat must lie in (0, 0.5]");
  }
  if (!(hbar >= 0.0 && hbar <= log_v + 1e-12)) {
    throw ConfigError("mean step entropy must lie in [0, log V]");
  }

  for (int j = 1; j <= k_max; ++j) {
    double center = j * hbar;
    double half_width = std::sqrt(2.0 * eps * (j + 1)) *
                        (j * log_v + std::log(1.0 / eps));
    double lo = std::max(0.0, center - half_width);
    double hi = std::min(j * log_v, center + half_width);
    // True lookahead entropy is nondecreasing in the horizon, so tightening
    // by the running maximum keeps both bounds admissible.
    table.lower[j] = std::max(lo, table.lower[j - 1]);
    table.upper[j] = std::max(hi, table.upper[j - 1]);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Rollout machinery
// ---------------------------------------------------------------------------

std::uint64_t rollout_seed(std::uint64_t step_seed, TokenId candidate) {
  return rng::substream(step_seed, rng::Stream::kRolloutSeed,
                        static_cast<std::uint64_t>(static_cast<std::uint32_t>(candidate)));
}

namespace {

double rollout_uniform(std::uint64_t seed, int path, int step) {
  return rng::uniform_at(rng::substream(seed, rng::Stream::kRolloutToken,
                                        static_cast<std::uint64_t>(path),
                                        static_cast<std::uint64_t>(step)));
}

BoundTable loose_for(int k, int vocab) {
  return build_bound_table(BoundMode::kLoose, k, vocab);
}

}  // namespace

LookaheadEvaluator::LookaheadEvaluator(const LanguageModel& model,
                                       const Prefix& prefix, TokenId candidate,
                                       int k, int K, std::uint64_t seed)
    : model_(&model), candidate_(candidate), k_(k), K_(K), seed_(seed) {
  if (k < 1) throw ConfigError("lookahead horizon must be >= 1");
  if (K < 1) throw ConfigError("rollout count must be >= 1");
  Prefix start = prefix;
  start.push_back(candidate);
  paths_.assign(K, start);
  batch_.seed = seed;
  batch_.paths.assign(K, {});
  batch_.step_entropies.assign(K, {});
}

void LookaheadEvaluator::advance_to(int h) {
  if (h > k_) throw ConfigError("cannot advance past the full horizon");
  while (evaluated() < h) {
    int j = evaluated() + 1;
    double mean = 0.0;
    // All paths still share the same prefix at the first step.
    VocabLogits shared;
    if (j == 1) {
      shared = model_->next_logits(paths_[0]);
      ++model_calls_;
    }
    for (int i = 0; i < K_; ++i) {
      VocabLogits logits;
      if (j == 1) {
        logits = shared;
      } else {
        logits = model_->next_logits(paths_[i]);
        ++model_calls_;
      }
      double hstep = step_entropy(logits);
      mean += hstep;
      batch_.step_entropies[i].push_back(hstep);
      TokenId tok = sample_token(logits, rollout_uniform(seed_, i, j));
      paths_[i].push_back(tok);
      batch_.paths[i].push_back(tok);
    }
    means_.push_back(mean / K_);
  }
}

double LookaheadEvaluator::partial_sum(int h) const {
  double s = 0.0;
  for (int j = 0; j < h; ++j) s += means_[j];
  return s;
}

double LookaheadEvaluator::first_step() {
  advance_to(1);
  return means_[0];
}

EntropyEstimate mc_lookahead_entropy(const LanguageModel& model,
                                     const Prefix& prefix, TokenId candidate,
                                     int k, int K, std::uint64_t seed) {
  if (k < 1) throw ConfigError("lookahead horizon must be >= 1");
  if (K < 1) throw ConfigError("rollout count must be >= 1");
  Prefix start = prefix;
  start.push_back(candidate);

  double acc = 0.0;
  for (int i = 0; i < K; ++i) {
    Prefix path = start;
    double logprob = 0.0;
    for (int j = 1; j <= k; ++j) {
      VocabLogits logits = model.next_logits(path);
      std::vector<double> lp = log_softmax(logits);
      TokenId tok = sample_token(logits, rollout_uniform(seed, i, j));
      logprob += lp[tok];
      path.push_back(tok);
    }
    acc += -logprob;
  }

  double log_v = std::log(static_cast<double>(model.descriptor().vocab_size));
  EntropyEstimate est;
  est.value = acc / K;
  est.horizon = k;
  est.rollouts = K;
  est.lower = 0.0;
  est.upper = k * log_v;
  // The MC estimate is a raw -log probability and may legitimately exceed
  // the maximum entropy; it is reported unclamped.
  return est;
}

EntropyEstimate rb_lookahead_entropy(const LanguageModel& model,
                                     const Prefix& prefix, TokenId candidate,
                                     int k, int K, std::uint64_t seed,
                                     const BoundTable* bounds) {
  BoundTable fallback;
  if (bounds == nullptr) {
    fallback = loose_for(k, model.descriptor().vocab_size);
    bounds = &fallback;
  }
  if (bounds->horizon_max < k) {
    throw ConfigError("bound table shorter than lookahead horizon");
  }

  LookaheadEvaluator eval(model, prefix, candidate, k, K, seed);
  eval.advance_to(k);
  double raw = eval.partial_sum(k);

  EntropyEstimate est;
  est.horizon = k;
  est.rollouts = K;
  est.lower = bounds->lower[k];
  est.upper = bounds->upper[k];
  est.value = std::clamp(raw, est.lower, est.upper);
  if (est.value != raw) est.clamp_events = 1;
  return est;
}

ClampedEstimate compose_clamped(double first_step, double rest_raw, int k,
                                const BoundTable& bounds) {
  if (bounds.horizon_max < k) {
    throw ConfigError("bound table shorter than lookahead horizon");
  }
  ClampedEstimate out;
  double rest = rest_raw;
  if (k > 1) {
    rest = std::clamp(rest_raw, bounds.lower[k - 1], bounds.upper[k - 1]);
    if (rest != rest_raw) ++out.clamp_events;
  } else {
    rest = 0.0;
  }
  double total = first_step + rest;
  out.value = std::clamp(total, bounds.lower[k], bounds.upper[k]);
  if (out.value != total) ++out.clamp_events;
  return out;
}

int get_rollout_horizon(double score, double step_entropy_hint, double alpha,
                        int k, double threshold, const BoundTable& bounds) {
  (void)step_entropy_hint;
  if (k < 1) throw ConfigError("horizon selection needs k >= 1");
  if (bounds.horizon_max < k) {
    throw ConfigError("bound table shorter than lookahead horizon");
  }
  if (threshold == kNegInf) return 1;
  double gap = score - threshold;
  if (!(gap > 0.0)) return k;
  double mag = std::abs(alpha);
  for (int h = 1; h <= k; ++h) {
    if (mag * bounds.width(k - h) < gap) return h;
  }
  return k;
}

VarianceReport mc_vs_rb_variance(const LanguageModel& model,
                                 const Prefix& prefix, TokenId candidate,
                                 int k, int K, int trials, std::uint64_t seed) {
  if (trials < 2) throw ConfigError("variance comparison needs >= 2 trials");

  double mean_mc = 0.0, m2_mc = 0.0;
  double mean_rb = 0.0, m2_rb = 0.0;
  for (int t = 0; t < trials; ++t) {
    std::uint64_t trial_seed =
        rng::substream(seed, rng::Stream::kTrial, static_cast<std::uint64_t>(t));
    double mc = mc_lookahead_entropy(model, prefix, candidate, k, K, trial_seed)
                    .value;
    double rb = rb_lookahead_entropy(model, prefix, candidate, k, K, trial_seed)
                    .value;
    double n = static_cast<double>(t + 1);
    double d_mc = mc - mean_mc;
    mean_mc += d_mc / n;
    m2_mc += d_mc * (mc - mean_mc);
    double d_rb = rb - mean_rb;
    mean_rb += d_rb / n;
    m2_rb += d_rb * (rb - mean_rb);
  }

  VarianceReport report;
  report.trials = trials;
  report.mean_mc = mean_mc;
  report.mean_rb = mean_rb;
  report.var_mc = m2_mc / (trials - 1);
  report.var_rb = m2_rb / (trials - 1);
  return report;
}

}  // namespace ead
