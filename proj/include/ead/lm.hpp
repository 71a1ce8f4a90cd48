#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ead/types.hpp"

namespace ead {

/// Conditional next-token score source. Local implementations are read-only
/// after construction and safe for concurrent queries; `next_logits` never
/// mutates the prefix it receives and is deterministic for a fixed
/// (model, prefix).
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const ModelDescriptor& descriptor() const = 0;

  /// Log-unnormalized scores for the token following `prefix`.
  /// Throws ContextOverflowError if the prefix fills the context window.
  virtual VocabLogits next_logits(const Prefix& prefix) const = 0;

 protected:
  void check_context(const Prefix& prefix) const {
    if (static_cast<long>(prefix.size()) >= descriptor().max_context) {
      throw ContextOverflowError("prefix length " +
                                 std::to_string(prefix.size()) +
                                 " reaches max context " +
                                 std::to_string(descriptor().max_context));
    }
  }
};

inline constexpr long kDefaultMaxContext = 1L << 20;

// ---------------------------------------------------------------------------
// Logit helpers
// ---------------------------------------------------------------------------

double log_sum_exp(std::span<const double> values);

/// softmax over finite entries; -inf entries get probability 0.
std::vector<double> softmax(const VocabLogits& logits);

std::vector<double> log_softmax(const VocabLogits& logits);

/// Inverse-CDF categorical draw over softmax(logits) with uniform u in (0,1).
TokenId sample_token(const VocabLogits& logits, double u);

/// Argmax with lowest-index tie-break.
TokenId argmax_token(std::span<const double> values);

// ---------------------------------------------------------------------------
// Toy model zoo: each admits an exact entropy oracle.
// ---------------------------------------------------------------------------

/// i.i.d. biased coin; token 0 is heads.
class CoinModel final : public LanguageModel {
 public:
  explicit CoinModel(double p_heads, long max_context = kDefaultMaxContext);

  const ModelDescriptor& descriptor() const override { return descriptor_; }
  VocabLogits next_logits(const Prefix& prefix) const override;

  double p_heads() const { return p_heads_; }

 private:
  double p_heads_;
  VocabLogits logits_;
  ModelDescriptor descriptor_;
};

/// Finite-state chain with an explicit row-stochastic transition matrix.
/// Conditions on the last token only; an empty prefix uses the initial
/// distribution.
class MarkovModel final : public LanguageModel {
 public:
  MarkovModel(std::vector<std::vector<double>> rows,
              std::vector<double> initial,
              long max_context = kDefaultMaxContext);

  static MarkovModel uniform(int vocab, long max_context = kDefaultMaxContext);

  const ModelDescriptor& descriptor() const override { return descriptor_; }
  VocabLogits next_logits(const Prefix& prefix) const override;

  /// Stationary distribution (power iteration); exact entropy-rate oracles
  /// build on this.
  std::vector<double> stationary() const;

 private:
  std::vector<VocabLogits> row_logits_;
  VocabLogits initial_logits_;
  std::vector<std::vector<double>> rows_;
  std::vector<double> initial_;
  ModelDescriptor descriptor_;
};

/// Additive-smoothed count model. Conditions on the last min(order, t)
/// tokens; context lengths 0..order each keep their own count table, so
/// short prefixes are well-defined without padding. An unseen context with
/// zero smoothing falls back to uniform.
class NgramModel final : public LanguageModel {
 public:
  NgramModel(int vocab, int order, double smoothing,
             long max_context = kDefaultMaxContext);

  const ModelDescriptor& descriptor() const override { return descriptor_; }
  VocabLogits next_logits(const Prefix& prefix) const override;

  int order() const { return order_; }
  double smoothing() const { return smoothing_; }

  void observe(std::span<const TokenId> context, TokenId next);

 private:
  struct ContextCounts {
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;
  };

  static std::uint64_t context_key(std::span<const TokenId> context);

  int order_;
  double smoothing_;
  // one table per context length
  std::vector<std::unordered_map<std::uint64_t, ContextCounts>> tables_;
  ModelDescriptor descriptor_;
};

/// Count-based MLE fit with additive smoothing. `vocab` 0 infers
/// max(corpus)+1. Throws ConfigError for an empty corpus or order < 1.
NgramModel train_ngram(std::span<const TokenId> corpus, int order,
                       double smoothing, int vocab = 0);

// ---------------------------------------------------------------------------
// Exact enumeration oracle support
// ---------------------------------------------------------------------------

/// Joint distribution over all length-`horizon` continuations. Paths are
/// indexed base-V with the first step as the most significant digit.
struct SequenceDistribution {
  int vocab = 0;
  int horizon = 0;
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  std::vector<TokenId> decode(std::size_t index) const;
  std::size_t encode(std::span<const TokenId> path) const;

  /// Joint entropy -sum p log p in nats.
  double entropy() const;
};

/// Enumerates V^horizon continuation probabilities by chaining next_logits.
/// Throws EnumerationCapError when V^horizon exceeds `cap`.
SequenceDistribution exact_sequence_distribution(const LanguageModel& model,
                                                 const Prefix& prefix,
                                                 int horizon,
                                                 std::size_t cap = 1000000);

// ---------------------------------------------------------------------------
// Text corpora (byte or whitespace tokens) for n-gram training
// ---------------------------------------------------------------------------

enum class TokenizerKind { kByte, kWhitespace };

struct SymbolTable {
  std::vector<std::string> symbols;
  std::unordered_map<std::string, TokenId> index;

  TokenId intern(const std::string& s);
  std::optional<TokenId> lookup(const std::string& s) const;
  int size() const { return static_cast<int>(symbols.size()); }
};

struct TokenizedText {
  std::vector<TokenId> tokens;
  SymbolTable table;
};

TokenizedText tokenize_text(const std::string& text, TokenizerKind kind);

/// Maps text onto an existing table; throws ConfigError on unknown symbols.
std::vector<TokenId> tokenize_with(const SymbolTable& table,
                                   const std::string& text,
                                   TokenizerKind kind);

std::string detokenize(const SymbolTable& table, std::span<const TokenId> tokens,
                       TokenizerKind kind);

}  // namespace ead
