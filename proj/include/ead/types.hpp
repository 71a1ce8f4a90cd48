#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ead {

using TokenId = std::int32_t;

/// Token sequence conditioning the model. Append-only during a generation.
using Prefix = std::vector<TokenId>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Log-unnormalized next-token scores in natural-log space.
/// An entry of -inf marks an infeasible token; at least one entry must be
/// finite. All entropies derived from these are in nats.
struct VocabLogits {
  std::vector<double> values;

  VocabLogits() = default;
  explicit VocabLogits(std::vector<double> v) : values(std::move(v)) {}

  int size() const { return static_cast<int>(values.size()); }

  int finite_count() const {
    int n = 0;
    for (double v : values) {
      if (std::isfinite(v)) ++n;
    }
    return n;
  }
};

enum class ModelKind { kCoin, kMarkov, kNgram, kRemote };

struct ModelDescriptor {
  int vocab_size = 0;
  long max_context = 0;
  ModelKind kind = ModelKind::kCoin;
};

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kCoin: return "coin";
    case ModelKind::kMarkov: return "markov";
    case ModelKind::kNgram: return "ngram";
    case ModelKind::kRemote: return "remote";
  }
  return "unknown";
}

// Error taxonomy. The CLI maps these onto exit codes: config errors -> 1,
// oracle/invariant failures -> 2, transport errors -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ContextOverflowError : Error {
  using Error::Error;
};

struct EnumerationCapError : Error {
  using Error::Error;
};

struct TransportError : Error {
  using Error::Error;
};

struct ProtocolError : Error {
  using Error::Error;
};

struct InvariantError : Error {
  using Error::Error;
};

struct CalibrationError : Error {
  using Error::Error;
};

/// Rejects malformed logit vectors (NaN, +inf, empty, or no finite entry).
inline void validate_logits(const VocabLogits& logits) {
  if (logits.values.empty()) {
    throw ConfigError("logits vector is empty");
  }
  bool any_finite = false;
  for (double v : logits.values) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw ConfigError("logits contain NaN or +inf");
    }
    if (std::isfinite(v)) any_finite = true;
  }
  if (!any_finite) {
    throw ConfigError("logits have no finite entry");
  }
}

}  // namespace ead
