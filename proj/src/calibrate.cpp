#include "ead/calibrate.hpp"

#include <algorithm>
#include <cmath>

#include "ead/entropy.hpp"
#include "ead/rng.hpp"
#include "ead/stats.hpp"

namespace ead {

namespace {

std::uint64_t position_seed(std::uint64_t seed, std::size_t seq, std::size_t t) {
  return rng::mix(seed, static_cast<std::uint64_t>(seq),
                  static_cast<std::uint64_t>(t));
}

}  // namespace

MomentTarget estimate_mu_p(const LanguageModel& model,
                           const std::vector<Prefix>& heldout, int k, int K,
                           std::uint64_t seed) {
  if (heldout.empty()) throw ConfigError("held-out data is empty");
  stats::Accumulator acc;
  for (std::size_t s = 0; s < heldout.size(); ++s) {
    const Prefix& seq = heldout[s];
    Prefix prefix;
    prefix.reserve(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
      TokenId realized = seq[t];
      std::uint64_t pos_seed = position_seed(seed, s, t);
      acc.add(rb_lookahead_entropy(model, prefix, realized, k, K,
                                   rollout_seed(pos_seed, realized))
                  .value);
      prefix.push_back(realized);
    }
  }
  if (acc.count() == 0) throw ConfigError("held-out data has no positions");
  MomentTarget target;
  target.mu_p = acc.mean();
  target.n_samples = acc.count();
  target.std_err = acc.count() > 1 ? acc.std_error() : 0.0;
  return target;
}

MomentSamples collect_moment_samples(const LanguageModel& model,
                                     const std::vector<Prefix>& sequences,
                                     int k, int K, int n_draws,
                                     std::uint64_t seed) {
  if (sequences.empty()) throw ConfigError("no sequences for moment sampling");
  MomentSamples samples;
  samples.exact = (n_draws == 0);

  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const Prefix& seq = sequences[s];
    Prefix prefix;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      std::uint64_t pos_seed = position_seed(seed, s, t);
      VocabLogits logits = model.next_logits(prefix);
      std::vector<double> probs = softmax(logits);

      std::vector<MomentSamples::Item> items;
      if (samples.exact) {
        for (TokenId y = 0; y < logits.size(); ++y) {
          if (!std::isfinite(logits.values[y])) continue;
          double h = rb_lookahead_entropy(model, prefix, y, k, K,
                                          rollout_seed(pos_seed, y))
                         .value;
          items.push_back({probs[y], h});
        }
      } else {
        rng::Sequence draw_seq(rng::substream(pos_seed, rng::Stream::kScalar));
        for (int d = 0; d < n_draws; ++d) {
          TokenId y = sample_token(logits, draw_seq.next_uniform());
          double h = rb_lookahead_entropy(model, prefix, y, k, K,
                                          rng::mix(rollout_seed(pos_seed, y),
                                                   static_cast<std::uint64_t>(d)))
                         .value;
          items.push_back({1.0, h});
        }
      }
      samples.total_draws += static_cast<long>(items.size());
      samples.positions.push_back(std::move(items));
      prefix.push_back(seq[t]);
    }
  }
  return samples;
}

MuAlpha mu_alpha_from_samples(const MomentSamples& samples, double alpha) {
  if (samples.positions.empty()) {
    throw ConfigError("no moment samples collected");
  }
  stats::Accumulator position_means;
  double ess_sum = 0.0;
  for (const auto& items : samples.positions) {
    // Shift the exponent so its maximum is zero; weights can underflow but
    // never overflow, for either sign of alpha.
    double ref = items.front().entropy;
    for (const auto& it : items) {
      ref = alpha >= 0.0 ? std::min(ref, it.entropy) : std::max(ref, it.entropy);
    }
    double wsum = 0.0, whsum = 0.0, w2sum = 0.0;
    for (const auto& it : items) {
      double w = it.base_weight * std::exp(-alpha * (it.entropy - ref));
      wsum += w;
      whsum += w * it.entropy;
      w2sum += w * w;
    }
    position_means.add(whsum / wsum);
    double ess = wsum * wsum / w2sum;
    ess_sum += ess / static_cast<double>(items.size());
  }

  MuAlpha out;
  out.value = position_means.mean();
  out.std_err = position_means.count() > 1 ? position_means.std_error() : 0.0;
  out.ess_fraction = samples.exact
                         ? 1.0
                         : ess_sum / static_cast<double>(samples.positions.size());
  out.low_ess = !samples.exact && out.ess_fraction < 0.1;
  return out;
}

MuAlpha estimate_mu_alpha(const LanguageModel& model,
                          const std::vector<Prefix>& prompts, double alpha,
                          int k, int K, int n_rollouts, std::uint64_t seed) {
  if (n_rollouts < 2) throw ConfigError("importance sampling needs >= 2 rollouts");
  MomentSamples samples =
      collect_moment_samples(model, prompts, k, K, n_rollouts, seed);
  return mu_alpha_from_samples(samples, alpha);
}

CalibrationResult fit_alpha(const LanguageModel& model,
                            const std::vector<Prefix>& heldout,
                            const std::vector<Prefix>& prompts, int k, int K,
                            const FitOptions& options, std::uint64_t seed) {
  if (heldout.empty()) throw ConfigError("held-out data is empty");
  if (options.tol <= 0.0) throw ConfigError("tolerance must be > 0");

  MomentTarget target =
      estimate_mu_p(model, heldout, k, K, rng::mix(seed, 0x6d757031));
  const std::vector<Prefix>& moment_source = prompts.empty() ? heldout : prompts;
  MomentSamples samples = collect_moment_samples(
      model, moment_source, k, K, options.n_draws, rng::mix(seed, 0x6d75616c));

  CalibrationResult result;
  result.tol = options.tol;
  result.mu_p = target.mu_p;
  result.mu_p_std_err = target.std_err;

  auto g = [&](double alpha) {
    double value = target.mu_p - mu_alpha_from_samples(samples, alpha).value;
    result.trace.emplace_back(alpha, value);
    return value;
  };

  double lo = options.bracket.first;
  double hi = options.bracket.second;
  if (!(lo < hi)) throw ConfigError("bracket must satisfy lo < hi");

  double g_lo = g(lo);
  double g_hi = g(hi);

  // Constant-entropy degeneracy: g is identically ~0, every alpha is a root.
  double scale = std::max(1e-12, 1e-9 * std::max(1.0, std::abs(target.mu_p)));
  if (std::abs(g_lo) <= scale && std::abs(g_hi) <= scale) {
    result.degenerate = true;
    result.alpha_star = (lo <= 0.0 && hi >= 0.0) ? 0.0 : 0.5 * (lo + hi);
    result.bracket = {lo, hi};
    MuAlpha at = mu_alpha_from_samples(samples, result.alpha_star);
    result.mu_at_alpha_star = at.value;
    result.std_err_combined =
        std::sqrt(target.std_err * target.std_err + at.std_err * at.std_err);
    result.low_ess = at.low_ess;
    return result;
  }

  // g is nondecreasing in alpha: expand geometrically until it straddles 0.
  while (g_lo > 0.0 && lo > -options.bracket_cap) {
    lo = std::max(-options.bracket_cap, 2.0 * lo);
    g_lo = g(lo);
  }
  while (g_hi < 0.0 && hi < options.bracket_cap) {
    hi = std::min(options.bracket_cap, 2.0 * hi);
    g_hi = g(hi);
  }
  if (g_lo > 0.0 || g_hi < 0.0) {
    throw CalibrationError(
        "moment gap does not change sign on the maximal bracket");
  }

  int iterations = 0;
  double mid = 0.5 * (lo + hi);
  for (;;) {
    if (iterations++ > options.max_iterations) {
      throw CalibrationError("bisection exceeded max iterations");
    }
    mid = 0.5 * (lo + hi);
    double g_mid = g(mid);
    if (std::abs(g_mid) <= options.tol || (hi - lo) <= options.tol) break;
    if (g_mid < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }

  result.alpha_star = mid;
  result.bracket = {lo, hi};
  result.iterations = iterations;

  MuAlpha at = mu_alpha_from_samples(samples, mid);
  result.mu_at_alpha_star = at.value;
  result.low_ess = at.low_ess;
  result.std_err_combined =
      std::sqrt(target.std_err * target.std_err + at.std_err * at.std_err);

  // Fresh-sample validation: same estimator, new rollouts.
  MomentSamples fresh = collect_moment_samples(
      model, moment_source, k, K, options.n_draws, rng::mix(seed, 0x76616c69));
  result.validation_gap =
      target.mu_p - mu_alpha_from_samples(fresh, mid).value;
  return result;
}

double cross_entropy_of_tilted(const LanguageModel& model,
                               const std::vector<Prefix>& heldout,
                               double alpha, int k, int K, std::uint64_t seed,
                               int exact_vocab_cap, int z_draws) {
  if (heldout.empty()) throw ConfigError("held-out data is empty");
  const int vocab = model.descriptor().vocab_size;
  const bool exact = vocab <= exact_vocab_cap;

  stats::Accumulator acc;
  for (std::size_t s = 0; s < heldout.size(); ++s) {
    const Prefix& seq = heldout[s];
    Prefix prefix;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      TokenId realized = seq[t];
      std::uint64_t pos_seed = position_seed(seed, s, t);
      VocabLogits logits = model.next_logits(prefix);
      std::vector<double> logq = log_softmax(logits);

      auto entropy_of = [&](TokenId y, std::uint64_t extra) {
        return rb_lookahead_entropy(model, prefix, y, k, K,
                                    extra == 0
                                        ? rollout_seed(pos_seed, y)
                                        : rng::mix(rollout_seed(pos_seed, y),
                                                   extra))
            .value;
      };

      double h_realized = entropy_of(realized, 0);
      double log_z;
      if (exact) {
        std::vector<double> terms;
        terms.reserve(vocab);
        for (TokenId y = 0; y < vocab; ++y) {
          if (!std::isfinite(logq[y])) continue;
          terms.push_back(logq[y] - alpha * entropy_of(y, 0));
        }
        log_z = log_sum_exp(terms);
      } else {
        // log E_q[e^{-alpha H}] by Monte Carlo over next-token draws.
        rng::Sequence draw_seq(rng::substream(pos_seed, rng::Stream::kScalar));
        std::vector<double> terms;
        terms.reserve(z_draws);
        for (int d = 0; d < z_draws; ++d) {
          TokenId y = sample_token(logits, draw_seq.next_uniform());
          terms.push_back(-alpha *
                          entropy_of(y, static_cast<std::uint64_t>(d + 1)));
        }
        log_z = log_sum_exp(terms) - std::log(static_cast<double>(z_draws));
      }

      acc.add(-logq[realized] + alpha * h_realized + log_z);
      prefix.push_back(realized);
    }
  }
  return acc.mean();
}

}  // namespace ead
