#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ead/types.hpp"

namespace ead {

enum class BaselineKind { kGreedy, kTemperature, kTopK, kTopP, kMinP, kTypical };

/// Truncation/temperature sampler settings. `tau` is the temperature for
/// temperature/top-k/top-p/min-p and the target mass for typical decoding.
struct BaselineConfig {
  BaselineKind kind = BaselineKind::kGreedy;
  double tau = 1.0;
  int top_k = 0;
  double top_p = 1.0;
  double min_p = 0.0;

  void validate() const;
  std::string describe() const;
};

BaselineKind baseline_kind_from_string(const std::string& name);

/// The exact restricted-and-renormalized law the sampler draws from.
/// Greedy puts all mass on the argmax.
std::vector<double> baseline_distribution(const VocabLogits& logits,
                                          const BaselineConfig& config);

/// One draw from baseline_distribution; deterministic given the seed.
TokenId baseline_step(const VocabLogits& logits, const BaselineConfig& config,
                      std::uint64_t seed);

}  // namespace ead
