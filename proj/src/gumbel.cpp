#include "ead/gumbel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "ead/rng.hpp"

namespace ead {

double gumbel_noise(std::uint64_t seed, TokenId index) {
  double u = rng::uniform_at(
      rng::substream(seed, rng::Stream::kGumbelNoise,
                     static_cast<std::uint64_t>(static_cast<std::uint32_t>(index))));
  return rng::standard_gumbel_from_uniform(u);
}

std::vector<double> perturb_logits(const VocabLogits& logits,
                                   std::uint64_t seed) {
  std::vector<double> out(logits.values.size(), kNegInf);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (std::isfinite(logits.values[i])) {
      out[i] = logits.values[i] + gumbel_noise(seed, static_cast<TokenId>(i));
    }
  }
  return out;
}

TokenId gumbel_max(const VocabLogits& logits, std::uint64_t seed) {
  validate_logits(logits);
  TokenId best = -1;
  double best_v = kNegInf;
  for (std::size_t i = 0; i < logits.values.size(); ++i) {
    if (!std::isfinite(logits.values[i])) continue;
    double v = logits.values[i] + gumbel_noise(seed, static_cast<TokenId>(i));
    if (v > best_v) {
      best_v = v;
      best = static_cast<TokenId>(i);
    }
  }
  return best;
}

double gumbel_cdf(double x, double location) {
  return std::exp(-std::exp(-(x - location)));
}

double truncated_gumbel(double location, double lower_bound, double u) {
  if (!std::isfinite(lower_bound)) {
    return location + rng::standard_gumbel_from_uniform(u);
  }
  // F(x) = exp(-s exp(-(x-b))) restricted to x > b, with s = e^{-(b - mu)}.
  // Invert F(b) + u (1 - F(b)) using expm1/log1p so a bound far above the
  // location keeps precision.
  double s = std::exp(-(lower_bound - location));
  double tail = -std::expm1(-s);  // 1 - F(b)
  double neg_log_w = -std::log1p(-(1.0 - u) * tail);
  double x = location - std::log(neg_log_w);
  if (x <= lower_bound) {
    // Rounding can land exactly on the bound; the conditional law is open.
    x = std::nextafter(lower_bound, std::numeric_limits<double>::infinity());
  }
  return x;
}

namespace {

/// Exact Binomial(n, p) from a deterministic uniform stream. Inversion when
/// n*p is small, otherwise a plain Bernoulli sweep.
long long binomial_draw(long long n, double p, rng::Sequence& seq) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  double log_q = std::log1p(-p);
  if (n * p <= 50.0 && static_cast<double>(n) * log_q > -700.0) {
    double pmf = std::exp(static_cast<double>(n) * log_q);
    double cdf = pmf;
    double u = seq.next_uniform();
    long long j = 0;
    double ratio = p / (1.0 - p);
    while (u > cdf && j < n) {
      pmf *= ratio * static_cast<double>(n - j) / static_cast<double>(j + 1);
      cdf += pmf;
      ++j;
    }
    return j;
  }
  long long count = 0;
  for (long long i = 0; i < n; ++i) {
    if (seq.next_uniform() < p) ++count;
  }
  return count;
}

/// Floyd's algorithm: uniform m-subset of {0..n-1}.
std::vector<long long> uniform_subset(long long n, long long m,
                                      rng::Sequence& seq) {
  std::unordered_set<long long> picked;
  std::vector<long long> out;
  out.reserve(static_cast<std::size_t>(m));
  for (long long j = n - m; j < n; ++j) {
    long long t = static_cast<long long>(seq.next_below(static_cast<std::uint64_t>(j + 1)));
    if (picked.count(t)) t = j;
    picked.insert(t);
    out.push_back(t);
  }
  return out;
}

}  // namespace

LazyGumbelResult lazy_gumbel_max(const VocabLogits& logits, int top_m,
                                 std::uint64_t seed) {
  validate_logits(logits);
  const int vocab = logits.size();
  if (top_m < 1 || top_m > vocab) {
    throw ConfigError("top_m must be in [1, V]");
  }

  std::vector<TokenId> finite;
  finite.reserve(vocab);
  for (TokenId i = 0; i < vocab; ++i) {
    if (std::isfinite(logits.values[i])) finite.push_back(i);
  }

  int eager_n = std::min<int>(top_m, static_cast<int>(finite.size()));
  std::vector<TokenId> order = finite;
  std::nth_element(order.begin(), order.begin() + (eager_n - 1), order.end(),
                   [&](TokenId a, TokenId b) {
                     if (logits.values[a] != logits.values[b]) {
                       return logits.values[a] > logits.values[b];
                     }
                     return a < b;
                   });

  LazyGumbelResult result;
  double best = kNegInf;
  TokenId best_id = -1;
  for (int i = 0; i < eager_n; ++i) {
    TokenId id = order[i];
    double v = logits.values[id] + gumbel_noise(seed, id);
    ++result.instantiated;
    if (v > best || (v == best && id < best_id)) {
      best = v;
      best_id = id;
    }
  }

  std::vector<TokenId> tail(order.begin() + eager_n, order.end());
  if (!tail.empty()) {
    // The tail race is conditioned on the eager front-runner; the threshold
    // must not move as tail draws land.
    const double threshold = best;
    double tail_max_logit = kNegInf;
    for (TokenId id : tail) {
      tail_max_logit = std::max(tail_max_logit, logits.values[id]);
    }
    // P(logit + G > threshold) = 1 - exp(-e^{logit - threshold}); bound every
    // tail token by the max tail logit, then thin back to the exact rate.
    double p_bound = -std::expm1(-std::exp(tail_max_logit - threshold));
    rng::Sequence count_seq(rng::substream(seed, rng::Stream::kTailCount));
    long long m = binomial_draw(static_cast<long long>(tail.size()), p_bound,
                                count_seq);
    if (m > 0) {
      rng::Sequence select_seq(rng::substream(seed, rng::Stream::kTailSelect));
      rng::Sequence thin_seq(rng::substream(seed, rng::Stream::kTailThin));
      rng::Sequence trunc_seq(rng::substream(seed, rng::Stream::kTailGumbel));
      std::vector<long long> subset =
          uniform_subset(static_cast<long long>(tail.size()), m, select_seq);
      for (long long slot : subset) {
        TokenId id = tail[static_cast<std::size_t>(slot)];
        double p_exact = -std::expm1(-std::exp(logits.values[id] - threshold));
        if (thin_seq.next_uniform() >= p_exact / p_bound) continue;
        double v = truncated_gumbel(logits.values[id], threshold,
                                    trunc_seq.next_uniform());
        ++result.instantiated;
        ++result.tail_drawn;
        if (v > best || (v == best && id < best_id)) {
          best = v;
          best_id = id;
        }
      }
    }
  }

  result.token = best_id;
  return result;
}

}  // namespace ead
