#include "ead/lm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ead {

double log_sum_exp(std::span<const double> values) {
  double max_v = kNegInf;
  for (double v : values) max_v = std::max(max_v, v);
  if (!std::isfinite(max_v)) return kNegInf;
  double sum = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) sum += std::exp(v - max_v);
  }
  return max_v + std::log(sum);
}

std::vector<double> softmax(const VocabLogits& logits) {
  double lse = log_sum_exp(logits.values);
  std::vector<double> probs(logits.values.size(), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (std::isfinite(logits.values[i])) {
      probs[i] = std::exp(logits.values[i] - lse);
    }
  }
  return probs;
}

std::vector<double> log_softmax(const VocabLogits& logits) {
  double lse = log_sum_exp(logits.values);
  std::vector<double> out(logits.values.size(), kNegInf);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (std::isfinite(logits.values[i])) {
      out[i] = logits.values[i] - lse;
    }
  }
  return out;
}

TokenId sample_token(const VocabLogits& logits, double u) {
  std::vector<double> probs = softmax(logits);
  double cum = 0.0;
  TokenId last_finite = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!std::isfinite(logits.values[i])) continue;
    last_finite = static_cast<TokenId>(i);
    cum += probs[i];
    if (u < cum) return last_finite;
  }
  return last_finite;  // u landed in rounding slack at the top of the CDF
}

TokenId argmax_token(std::span<const double> values) {
  TokenId best = 0;
  double best_v = kNegInf;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > best_v) {
      best_v = values[i];
      best = static_cast<TokenId>(i);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// CoinModel
// ---------------------------------------------------------------------------

CoinModel::CoinModel(double p_heads, long max_context) : p_heads_(p_heads) {
  if (!(p_heads >= 0.0 && p_heads <= 1.0)) {
    throw ConfigError("coin bias must be in [0,1]");
  }
  logits_.values = {p_heads > 0.0 ? std::log(p_heads) : kNegInf,
                    p_heads < 1.0 ? std::log(1.0 - p_heads) : kNegInf};
  descriptor_ = ModelDescriptor{2, max_context, ModelKind::kCoin};
}

VocabLogits CoinModel::next_logits(const Prefix& prefix) const {
  check_context(prefix);
  return logits_;
}

// ---------------------------------------------------------------------------
// MarkovModel
// ---------------------------------------------------------------------------

namespace {

VocabLogits distribution_to_logits(const std::vector<double>& probs) {
  VocabLogits logits;
  logits.values.reserve(probs.size());
  double total = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw ConfigError("negative probability in distribution");
    total += p;
    logits.values.push_back(p > 0.0 ? std::log(p) : kNegInf);
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("distribution rows must sum to 1");
  }
  validate_logits(logits);
  return logits;
}

}  // namespace

MarkovModel::MarkovModel(std::vector<std::vector<double>> rows,
                         std::vector<double> initial, long max_context)
    : rows_(std::move(rows)), initial_(std::move(initial)) {
  int vocab = static_cast<int>(rows_.size());
  if (vocab < 2) throw ConfigError("markov chain needs at least 2 states");
  if (static_cast<int>(initial_.size()) != vocab) {
    throw ConfigError("initial distribution size mismatch");
  }
  for (const auto& row : rows_) {
    if (static_cast<int>(row.size()) != vocab) {
      throw ConfigError("transition matrix must be square");
    }
    row_logits_.push_back(distribution_to_logits(row));
  }
  initial_logits_ = distribution_to_logits(initial_);
  descriptor_ = ModelDescriptor{vocab, max_context, ModelKind::kMarkov};
}

MarkovModel MarkovModel::uniform(int vocab, long max_context) {
  std::vector<double> flat(vocab, 1.0 / vocab);
  return MarkovModel(std::vector<std::vector<double>>(vocab, flat), flat,
                     max_context);
}

VocabLogits MarkovModel::next_logits(const Prefix& prefix) const {
  check_context(prefix);
  if (prefix.empty()) return initial_logits_;
  TokenId last = prefix.back();
  if (last < 0 || last >= descriptor_.vocab_size) {
    throw ConfigError("token out of vocabulary");
  }
  return row_logits_[last];
}

std::vector<double> MarkovModel::stationary() const {
  std::vector<double> pi = initial_;
  std::vector<double> next(pi.size());
  for (int iter = 0; iter < 100000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t s = 0; s < pi.size(); ++s) {
      for (std::size_t t = 0; t < pi.size(); ++t) {
        next[t] += pi[s] * rows_[s][t];
      }
    }
    double diff = 0.0;
    for (std::size_t t = 0; t < pi.size(); ++t) {
      diff += std::abs(next[t] - pi[t]);
    }
    pi.swap(next);
    if (diff < 1e-14) break;
  }
  return pi;
}

// ---------------------------------------------------------------------------
// NgramModel
// ---------------------------------------------------------------------------

NgramModel::NgramModel(int vocab, int order, double smoothing, long max_context)
    : order_(order), smoothing_(smoothing) {
  if (order < 1) throw ConfigError("ngram order must be >= 1");
  if (vocab < 1) throw ConfigError("ngram vocab must be >= 1");
  if (smoothing < 0.0) throw ConfigError("smoothing must be >= 0");
  tables_.resize(order + 1);
  descriptor_ = ModelDescriptor{vocab, max_context, ModelKind::kNgram};
}

std::uint64_t NgramModel::context_key(std::span<const TokenId> context) {
  // FNV-1a over the token stream; contexts live in per-length tables so
  // length collisions are impossible.
  std::uint64_t h = 1469598103934665603ULL;
  for (TokenId t : context) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t));
    h *= 1099511628211ULL;
  }
  return h;
}

void NgramModel::observe(std::span<const TokenId> context, TokenId next) {
  if (next < 0 || next >= descriptor_.vocab_size) {
    throw ConfigError("ngram observation out of vocabulary");
  }
  std::size_t len = context.size();
  auto& slot = tables_[len][context_key(context)];
  if (slot.counts.empty()) {
    slot.counts.assign(descriptor_.vocab_size, 0);
  }
  ++slot.counts[next];
  ++slot.total;
}

VocabLogits NgramModel::next_logits(const Prefix& prefix) const {
  check_context(prefix);
  std::size_t len = std::min<std::size_t>(order_, prefix.size());
  std::span<const TokenId> context(prefix.data() + prefix.size() - len, len);

  const ContextCounts* counts = nullptr;
  auto it = tables_[len].find(context_key(context));
  if (it != tables_[len].end()) counts = &it->second;

  int vocab = descriptor_.vocab_size;
  VocabLogits logits;
  logits.values.resize(vocab);
  if (counts == nullptr && smoothing_ == 0.0) {
    // Nothing observed here and no smoothing mass: uniform fallback.
    double u = -std::log(static_cast<double>(vocab));
    std::fill(logits.values.begin(), logits.values.end(), u);
    return logits;
  }
  double denom =
      (counts ? static_cast<double>(counts->total) : 0.0) + smoothing_ * vocab;
  for (int v = 0; v < vocab; ++v) {
    double num =
        (counts ? static_cast<double>(counts->counts[v]) : 0.0) + smoothing_;
    logits.values[v] = num > 0.0 ? std::log(num) - std::log(denom) : kNegInf;
  }
  return logits;
}

NgramModel train_ngram(std::span<const TokenId> corpus, int order,
                       double smoothing, int vocab) {
  if (corpus.empty()) throw ConfigError("ngram training corpus is empty");
  if (order < 1) throw ConfigError("ngram order must be >= 1");
  if (static_cast<int>(corpus.size()) <= order) {
    throw ConfigError("ngram training corpus shorter than order");
  }
  if (vocab == 0) {
    TokenId max_token = 0;
    for (TokenId t : corpus) max_token = std::max(max_token, t);
    vocab = max_token + 1;
  }
  NgramModel model(vocab, order, smoothing);
  for (std::size_t t = 0; t < corpus.size(); ++t) {
    std::size_t max_len = std::min<std::size_t>(order, t);
    for (std::size_t len = 0; len <= max_len; ++len) {
      model.observe(corpus.subspan(t - len, len), corpus[t]);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Exact enumeration
// ---------------------------------------------------------------------------

std::vector<TokenId> SequenceDistribution::decode(std::size_t index) const {
  std::vector<TokenId> path(horizon);
  for (int j = horizon - 1; j >= 0; --j) {
    path[j] = static_cast<TokenId>(index % vocab);
    index /= vocab;
  }
  return path;
}

std::size_t SequenceDistribution::encode(std::span<const TokenId> path) const {
  std::size_t idx = 0;
  for (TokenId t : path) idx = idx * vocab + static_cast<std::size_t>(t);
  return idx;
}

double SequenceDistribution::entropy() const {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

SequenceDistribution exact_sequence_distribution(const LanguageModel& model,
                                                 const Prefix& prefix,
                                                 int horizon, std::size_t cap) {
  if (horizon < 0) throw ConfigError("horizon must be >= 0");
  int vocab = model.descriptor().vocab_size;
  std::size_t total = 1;
  for (int j = 0; j < horizon; ++j) {
    if (total > cap / static_cast<std::size_t>(vocab)) {
      std::ostringstream msg;
      msg << "enumeration of " << vocab << "^" << horizon
          << " paths exceeds cap " << cap;
      throw EnumerationCapError(msg.str());
    }
    total *= static_cast<std::size_t>(vocab);
  }

  SequenceDistribution dist;
  dist.vocab = vocab;
  dist.horizon = horizon;
  dist.probs.assign(total, 0.0);

  Prefix path = prefix;
  // Depth-first product chain over all paths, visiting in index order.
  std::vector<std::vector<double>> logprob_stack;
  std::size_t index = 0;

  struct Frame {
    TokenId next = 0;
  };
  std::vector<Frame> frames;
  double acc = 0.0;
  std::vector<double> acc_stack;

  if (horizon == 0) {
    dist.probs[0] = 1.0;
    return dist;
  }

  logprob_stack.push_back(log_softmax(model.next_logits(path)));
  frames.push_back(Frame{});
  acc_stack.push_back(0.0);

  while (!frames.empty()) {
    Frame& frame = frames.back();
    if (frame.next >= vocab) {
      frames.pop_back();
      logprob_stack.pop_back();
      acc_stack.pop_back();
      if (!path.empty() && path.size() > prefix.size()) path.pop_back();
      continue;
    }
    TokenId tok = frame.next++;
    double lp = logprob_stack.back()[tok];
    acc = acc_stack.back() + (std::isfinite(lp) ? lp : kNegInf);
    if (static_cast<int>(frames.size()) == horizon) {
      dist.probs[index++] = std::isfinite(acc) ? std::exp(acc) : 0.0;
    } else {
      path.push_back(tok);
      if (std::isfinite(acc)) {
        logprob_stack.push_back(log_softmax(model.next_logits(path)));
      } else {
        // Zero-probability branch: children are all zero, skip model calls.
        logprob_stack.push_back(std::vector<double>(vocab, kNegInf));
      }
      frames.push_back(Frame{});
      acc_stack.push_back(acc);
    }
  }
  return dist;
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

TokenId SymbolTable::intern(const std::string& s) {
  auto it = index.find(s);
  if (it != index.end()) return it->second;
  TokenId id = static_cast<TokenId>(symbols.size());
  symbols.push_back(s);
  index.emplace(s, id);
  return id;
}

std::optional<TokenId> SymbolTable::lookup(const std::string& s) const {
  auto it = index.find(s);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

namespace {

std::vector<std::string> split_symbols(const std::string& text,
                                       TokenizerKind kind) {
  std::vector<std::string> out;
  if (kind == TokenizerKind::kByte) {
    out.reserve(text.size());
    for (char c : text) out.emplace_back(1, c);
  } else {
    std::istringstream in(text);
    std::string word;
    while (in >> word) out.push_back(word);
  }
  return out;
}

}  // namespace

TokenizedText tokenize_text(const std::string& text, TokenizerKind kind) {
  TokenizedText out;
  for (const std::string& sym : split_symbols(text, kind)) {
    out.tokens.push_back(out.table.intern(sym));
  }
  return out;
}

std::vector<TokenId> tokenize_with(const SymbolTable& table,
                                   const std::string& text,
                                   TokenizerKind kind) {
  std::vector<TokenId> out;
  for (const std::string& sym : split_symbols(text, kind)) {
    auto id = table.lookup(sym);
    if (!id) throw ConfigError("symbol not in model vocabulary: '" + sym + "'");
    out.push_back(*id);
  }
  return out;
}

std::string detokenize(const SymbolTable& table, std::span<const TokenId> tokens,
                       TokenizerKind kind) {
  std::string out;
  bool first = true;
  for (TokenId t : tokens) {
    if (t < 0 || t >= table.size()) throw ConfigError("token out of table");
    if (kind == TokenizerKind::kWhitespace && !first) out += ' ';
    out += table.symbols[t];
    first = false;
  }
  return out;
}

}  // namespace ead
