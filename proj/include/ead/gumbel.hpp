#pragma once

#include <cstdint>
#include <vector>

#include "ead/types.hpp"

namespace ead {

/// Standard Gumbel draw for one vocabulary index. Eager and lazy samplers
/// read the same (seed, index) stream, so they can be coupled in tests.
double gumbel_noise(std::uint64_t seed, TokenId index);

/// logits + per-index Gumbel noise; -inf stays -inf.
std::vector<double> perturb_logits(const VocabLogits& logits,
                                   std::uint64_t seed);

/// argmax_i { logit_i + G_i }, an exact sample from softmax(logits).
TokenId gumbel_max(const VocabLogits& logits, std::uint64_t seed);

/// Inverse-CDF sample from Gumbel(location, 1) conditioned on exceeding
/// `lower_bound`, driven by uniform u in (0,1). A lower_bound of -inf gives
/// the unconditional distribution.
double truncated_gumbel(double location, double lower_bound, double u);

double gumbel_cdf(double x, double location = 0.0);

struct LazyGumbelResult {
  TokenId token = 0;
  /// Gumbels actually drawn: the eager top-m block plus accepted tail draws.
  int instantiated = 0;
  int tail_drawn = 0;
};

/// Exact Gumbel-Max with lazy tail instantiation: Gumbels are drawn eagerly
/// for the top_m largest logits; the tail contributes only the indices whose
/// perturbation would exceed the current front-runner. Tail exceedance counts
/// come from a Binomial under the max tail logit, thinned per index by the
/// exact exceedance ratio, so the output law is identical to gumbel_max.
/// With top_m == V and the same seed the output token is identical as well.
LazyGumbelResult lazy_gumbel_max(const VocabLogits& logits, int top_m,
                                 std::uint64_t seed);

}  // namespace ead
