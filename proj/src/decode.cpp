#include "ead/decode.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "ead/gumbel.hpp"
#include "ead/rng.hpp"

namespace ead {

void EadConfig::validate() const {
  if (lookahead < 1) throw ConfigError("lookahead horizon must be >= 1");
  if (rollouts < 1) throw ConfigError("rollout count must be >= 1");
  if (block_size < 1) throw ConfigError("block size must be >= 1");
  if (bounds.horizon_max < lookahead) {
    throw ConfigError("bound table shorter than lookahead horizon");
  }
  if (static_cast<int>(bounds.lower.size()) != bounds.horizon_max + 1 ||
      static_cast<int>(bounds.upper.size()) != bounds.horizon_max + 1) {
    throw ConfigError("bound table vectors malformed");
  }
}

double prune_width(double alpha, const BoundTable& bounds, int k) {
  return std::abs(alpha) * bounds.width(k);
}

std::vector<TokenId> prune_by_gap(const std::vector<TokenId>& ids,
                                  const std::vector<double>& perturbed,
                                  double width) {
  double front = kNegInf;
  for (double v : perturbed) front = std::max(front, v);
  std::vector<TokenId> kept;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (perturbed[i] >= front - width) kept.push_back(ids[i]);
  }
  return kept;
}

double best_case_remaining(double alpha, const BoundTable& bounds, int k) {
  return std::max(-alpha * bounds.upper[k - 1], -alpha * bounds.lower[k - 1]);
}

namespace {

struct Contender {
  TokenId id = -1;
  double gumbel = kNegInf;
  std::optional<LookaheadEvaluator> eval;
  double h_lo = 0.0;  // bracket on the clamped lookahead estimate
  double h_hi = 0.0;
  double score_lo = kNegInf;
  double score_up = kNegInf;
  bool rollouts_counted = false;

  bool resolved() const { return h_lo == h_hi; }
};

struct Bracket {
  double lo, hi;
  int clamp_events;
};

/// Bracket on the clamped estimate after `evaluated` of `k` steps. Endpoints
/// go through compose_clamped, whose clips are monotone, so the true final
/// estimate always lands inside.
Bracket estimate_bracket(double first_step, double rest_partial, int evaluated,
                         int k, double log_v, const BoundTable& bounds) {
  int remaining = k - evaluated;
  ClampedEstimate lo =
      compose_clamped(first_step, rest_partial, k, bounds);
  if (remaining == 0) {
    return Bracket{lo.value, lo.value, lo.clamp_events};
  }
  ClampedEstimate hi = compose_clamped(
      first_step, rest_partial + remaining * log_v, k, bounds);
  return Bracket{lo.value, hi.value, 0};
}

void refresh_scores(Contender& c, double alpha) {
  double a = c.gumbel - alpha * c.h_lo;
  double b = c.gumbel - alpha * c.h_hi;
  double up = std::max(a, b);
  double lo = std::min(a, b);
  if (up > c.score_up + 1e-9 && std::isfinite(c.score_up)) {
    throw InvariantError("upper score increased while refining bounds");
  }
  if (lo > up) {
    throw InvariantError("score bracket crossed");
  }
  c.score_up = std::isfinite(c.score_up) ? std::min(c.score_up, up) : up;
  c.score_lo = lo;
}

struct RaceOutcome {
  TokenId token = -1;
  StepResult result;
};

/// The race on already-fetched logits. `alpha` is nonzero here.
RaceOutcome run_race(const LanguageModel& model, const Prefix& prefix,
                     const VocabLogits& logits, const EadConfig& cfg) {
  const int k = cfg.lookahead;
  const double alpha = cfg.alpha;
  const double log_v =
      std::log(static_cast<double>(model.descriptor().vocab_size));

  RaceOutcome out;
  StepResult& res = out.result;

  std::vector<TokenId> ids;
  std::vector<double> perturbed;
  for (TokenId i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits.values[i])) continue;
    ids.push_back(i);
    perturbed.push_back(logits.values[i] + gumbel_noise(cfg.seed, i));
  }
  res.candidates_initial = static_cast<int>(ids.size());

  std::vector<TokenId> kept =
      prune_by_gap(ids, perturbed, prune_width(alpha, cfg.bounds, k));
  res.survivors_after_gap = static_cast<int>(kept.size());

  std::vector<Contender> race;
  race.reserve(kept.size());
  for (TokenId id : kept) {
    Contender c;
    c.id = id;
    c.gumbel = logits.values[id] + gumbel_noise(cfg.seed, id);
    c.h_lo = cfg.bounds.lower[k];
    c.h_hi = cfg.bounds.upper[k];
    refresh_scores(c, alpha);
    race.push_back(std::move(c));
  }

  if (race.size() == 1) {
    out.token = race[0].id;
    return out;
  }

  // Tighten: exact one-step entropy for every survivor, then sort by the
  // refreshed upper scores.
  for (Contender& c : race) {
    c.eval.emplace(model, prefix, c.id, k, cfg.rollouts,
                   rollout_seed(cfg.seed, c.id));
    double m1 = c.eval->first_step();
    ++res.one_step_evals;
    Bracket b = estimate_bracket(m1, 0.0, 1, k, log_v, cfg.bounds);
    c.h_lo = b.lo;
    c.h_hi = b.hi;
    refresh_scores(c, alpha);
  }
  std::sort(race.begin(), race.end(), [](const Contender& a, const Contender& b) {
    if (a.score_up != b.score_up) return a.score_up > b.score_up;
    return a.id < b.id;
  });

  auto advance_contender = [&](Contender& c, int h) {
    h = std::clamp(h, 1, k);
    if (h <= c.eval->evaluated()) return;
    c.eval->advance_to(h);
    if (!c.rollouts_counted && h >= 2) {
      c.rollouts_counted = true;
      ++res.evals_used;
    }
    double m1 = c.eval->mean_step(1);
    double rest = c.eval->partial_sum(h) - m1;
    Bracket b = estimate_bracket(m1, rest, h, k, log_v, cfg.bounds);
    c.h_lo = b.lo;
    c.h_hi = b.hi;
    res.clamp_events += b.clamp_events;
    refresh_scores(c, alpha);
  };

  auto stop_winner = [&]() -> std::optional<std::size_t> {
    std::size_t best = 0;
    for (std::size_t i = 1; i < race.size(); ++i) {
      if (race[i].score_lo > race[best].score_lo) best = i;
    }
    for (std::size_t i = 0; i < race.size(); ++i) {
      if (i == best) continue;
      if (race[i].score_up >= race[best].score_lo) return std::nullopt;
    }
    return best;
  };

  const std::size_t n = race.size();
  for (std::size_t base = 0; base < n; base += cfg.block_size) {
    std::size_t end = std::min(n, base + cfg.block_size);
    double threshold =
        end < n ? race[end].score_up : kNegInf;
    for (std::size_t i = base; i < end; ++i) {
      int h = get_rollout_horizon(race[i].score_up, race[i].eval->mean_step(1),
                                  alpha, k, threshold, cfg.bounds);
      advance_contender(race[i], h);
    }
    ++res.blocks_processed;
    if (auto winner = stop_winner()) {
      out.token = race[*winner].id;
      return out;
    }
  }

  // No block separated the leaders: resolve everything and compare exactly.
  res.full_eval_fallback = true;
  for (Contender& c : race) {
    advance_contender(c, k);
    if (!c.resolved()) {
      throw InvariantError("contender unresolved at full horizon");
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < race.size(); ++i) {
    if (race[i].score_lo > race[best].score_lo ||
        (race[i].score_lo == race[best].score_lo && race[i].id < race[best].id)) {
      best = i;
    }
  }
  out.token = race[best].id;
  return out;
}

void finish_result(const LanguageModel& model, const Prefix& prefix,
                   const VocabLogits& logits, StepResult& res) {
  std::vector<double> lp = log_softmax(logits);
  res.chosen_logprob = lp[res.token];
  res.pre_step_entropy = step_entropy(logits);
  Prefix extended = prefix;
  extended.push_back(res.token);
  try {
    res.step_entropy_of_choice = step_entropy(model.next_logits(extended));
  } catch (const ContextOverflowError&) {
    res.step_entropy_of_choice = std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

StepResult ead_step(const LanguageModel& model, const Prefix& prefix,
                    const EadConfig& config) {
  config.validate();
  VocabLogits logits = model.next_logits(prefix);
  validate_logits(logits);
  if (logits.size() != model.descriptor().vocab_size) {
    throw InvariantError("model emitted logits of the wrong size");
  }

  StepResult res;
  if (config.alpha == 0.0) {
    // The tilt vanishes; the perturbed argmax already is the sample.
    res.token = gumbel_max(logits, config.seed);
    res.candidates_initial = logits.finite_count();
    res.survivors_after_gap = 1;
  } else {
    RaceOutcome out = run_race(model, prefix, logits, config);
    res = out.result;
    res.token = out.token;
  }
  finish_result(model, prefix, logits, res);
  return res;
}

StepResult exhaustive_step(const LanguageModel& model, const Prefix& prefix,
                           const EadConfig& config) {
  config.validate();
  VocabLogits logits = model.next_logits(prefix);
  validate_logits(logits);

  StepResult res;
  res.candidates_initial = logits.finite_count();
  res.survivors_after_gap = res.candidates_initial;

  TokenId best = -1;
  double best_score = kNegInf;
  for (TokenId i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits.values[i])) continue;
    double g = logits.values[i] + gumbel_noise(config.seed, i);
    double score = g;
    if (config.alpha != 0.0) {
      LookaheadEvaluator eval(model, prefix, i, config.lookahead,
                              config.rollouts, rollout_seed(config.seed, i));
      double m1 = eval.first_step();
      ++res.one_step_evals;
      eval.advance_to(config.lookahead);
      ++res.evals_used;
      ClampedEstimate est =
          compose_clamped(m1, eval.partial_sum(config.lookahead) - m1,
                          config.lookahead, config.bounds);
      res.clamp_events += est.clamp_events;
      score = g - config.alpha * est.value;
    }
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  res.token = best;
  finish_result(model, prefix, logits, res);
  return res;
}

std::vector<double> tilted_step_distribution(const LanguageModel& model,
                                             const Prefix& prefix,
                                             const EadConfig& config) {
  config.validate();
  VocabLogits logits = model.next_logits(prefix);
  std::vector<double> scores(logits.values.size(), kNegInf);
  for (TokenId i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits.values[i])) continue;
    double h = 0.0;
    if (config.alpha != 0.0) {
      LookaheadEvaluator eval(model, prefix, i, config.lookahead,
                              config.rollouts, rollout_seed(config.seed, i));
      double m1 = eval.first_step();
      eval.advance_to(config.lookahead);
      h = compose_clamped(m1, eval.partial_sum(config.lookahead) - m1,
                          config.lookahead, config.bounds)
              .value;
    }
    scores[i] = logits.values[i] - config.alpha * h;
  }
  return softmax(VocabLogits(std::move(scores)));
}

// ---------------------------------------------------------------------------
// Generation loop
// ---------------------------------------------------------------------------

long GenerationTrace::total_evals() const {
  long total = 0;
  for (const StepResult& s : steps) total += s.evals_used;
  return total;
}

double GenerationTrace::mean_evals() const {
  return steps.empty() ? 0.0
                       : static_cast<double>(total_evals()) / steps.size();
}

int GenerationTrace::total_clamp_events() const {
  int total = 0;
  for (const StepResult& s : steps) total += s.clamp_events;
  return total;
}

GenerationTrace generate(const LanguageModel& model, const Prefix& prompt,
                         const EadConfig& config, int max_tokens,
                         const std::vector<TokenId>& stop_tokens) {
  config.validate();
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");

  GenerationTrace trace;
  trace.seed = config.seed;
  Prefix prefix = prompt;
  long context_budget = model.descriptor().max_context;

  for (int step = 0; step < max_tokens; ++step) {
    // Leave room for the candidate token plus the rollout horizon.
    if (static_cast<long>(prefix.size()) + 1 + config.lookahead >=
        context_budget) {
      trace.hit_context_limit = true;
      break;
    }
    EadConfig step_config = config;
    step_config.seed = rng::substream(config.seed, rng::Stream::kStep,
                                      static_cast<std::uint64_t>(step));
    StepResult res = ead_step(model, prefix, step_config);
    trace.steps.push_back(res);
    trace.tokens.push_back(res.token);
    prefix.push_back(res.token);
    if (std::find(stop_tokens.begin(), stop_tokens.end(), res.token) !=
        stop_tokens.end()) {
      trace.hit_stop_token = true;
      break;
    }
  }
  return trace;
}

}  // namespace ead
