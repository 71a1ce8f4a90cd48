#include "ead/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ead/lm.hpp"
#include "ead/rng.hpp"

namespace ead {

void BaselineConfig::validate() const {
  switch (kind) {
    case BaselineKind::kGreedy:
      break;
    case BaselineKind::kTemperature:
      if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
      break;
    case BaselineKind::kTopK:
      if (top_k < 1) throw ConfigError("top-k needs k >= 1");
      if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
      break;
    case BaselineKind::kTopP:
      if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw ConfigError("top-p needs p in (0,1]");
      }
      if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
      break;
    case BaselineKind::kMinP:
      if (!(min_p > 0.0 && min_p <= 1.0)) {
        throw ConfigError("min-p needs p in (0,1]");
      }
      if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
      break;
    case BaselineKind::kTypical:
      if (!(tau > 0.0 && tau <= 1.0)) {
        throw ConfigError("typical decoding needs mass in (0,1]");
      }
      break;
  }
}

std::string BaselineConfig::describe() const {
  std::ostringstream out;
  switch (kind) {
    case BaselineKind::kGreedy: out << "greedy"; break;
    case BaselineKind::kTemperature: out << "temperature(tau=" << tau << ")"; break;
    case BaselineKind::kTopK: out << "top_k(k=" << top_k << ",tau=" << tau << ")"; break;
    case BaselineKind::kTopP: out << "top_p(p=" << top_p << ",tau=" << tau << ")"; break;
    case BaselineKind::kMinP: out << "min_p(p=" << min_p << ",tau=" << tau << ")"; break;
    case BaselineKind::kTypical: out << "typical(mass=" << tau << ")"; break;
  }
  return out.str();
}

BaselineKind baseline_kind_from_string(const std::string& name) {
  if (name == "greedy") return BaselineKind::kGreedy;
  if (name == "temperature") return BaselineKind::kTemperature;
  if (name == "top_k" || name == "top-k") return BaselineKind::kTopK;
  if (name == "top_p" || name == "top-p") return BaselineKind::kTopP;
  if (name == "min_p" || name == "min-p") return BaselineKind::kMinP;
  if (name == "typical") return BaselineKind::kTypical;
  throw ConfigError("unknown baseline kind: " + name);
}

namespace {

std::vector<double> tempered_probs(const VocabLogits& logits, double tau) {
  VocabLogits scaled;
  scaled.values.reserve(logits.values.size());
  for (double v : logits.values) {
    scaled.values.push_back(std::isfinite(v) ? v / tau : kNegInf);
  }
  return softmax(scaled);
}

std::vector<int> sorted_by_prob(const std::vector<double>& probs) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  return order;
}

std::vector<double> renormalize(std::vector<double> probs) {
  double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  for (double& p : probs) p /= total;
  return probs;
}

}  // namespace

std::vector<double> baseline_distribution(const VocabLogits& logits,
                                          const BaselineConfig& config) {
  config.validate();
  validate_logits(logits);
  const int vocab = logits.size();

  switch (config.kind) {
    case BaselineKind::kGreedy: {
      std::vector<double> out(vocab, 0.0);
      out[argmax_token(logits.values)] = 1.0;
      return out;
    }
    case BaselineKind::kTemperature:
      return tempered_probs(logits, config.tau);
    case BaselineKind::kTopK: {
      std::vector<double> probs = tempered_probs(logits, config.tau);
      std::vector<int> order = sorted_by_prob(probs);
      int keep = std::min<int>(config.top_k, logits.finite_count());
      std::vector<double> out(vocab, 0.0);
      for (int i = 0; i < keep; ++i) out[order[i]] = probs[order[i]];
      return renormalize(std::move(out));
    }
    case BaselineKind::kTopP: {
      std::vector<double> probs = tempered_probs(logits, config.tau);
      std::vector<int> order = sorted_by_prob(probs);
      std::vector<double> out(vocab, 0.0);
      double cum = 0.0;
      for (int id : order) {
        out[id] = probs[id];
        cum += probs[id];
        if (cum >= config.top_p) break;  // boundary token included
      }
      return renormalize(std::move(out));
    }
    case BaselineKind::kMinP: {
      // Temperature first, then drop tokens below min_p * max prob.
      std::vector<double> probs = tempered_probs(logits, config.tau);
      double pmax = *std::max_element(probs.begin(), probs.end());
      double floor = config.min_p * pmax;
      std::vector<double> out(vocab, 0.0);
      for (int i = 0; i < vocab; ++i) {
        if (probs[i] >= floor) out[i] = probs[i];
      }
      return renormalize(std::move(out));
    }
    case BaselineKind::kTypical: {
      std::vector<double> probs = softmax(logits);
      double h = 0.0;
      for (double p : probs) {
        if (p > 0.0) h -= p * std::log(p);
      }
      // Rank by closeness of surprisal to the entropy, keep the smallest
      // set reaching the target mass.
      std::vector<int> order(vocab);
      std::iota(order.begin(), order.end(), 0);
      std::vector<double> dist(vocab,
                               std::numeric_limits<double>::infinity());
      for (int i = 0; i < vocab; ++i) {
        if (probs[i] > 0.0) dist[i] = std::abs(-std::log(probs[i]) - h);
      }
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
      });
      std::vector<double> out(vocab, 0.0);
      double cum = 0.0;
      for (int id : order) {
        if (probs[id] <= 0.0) break;
        out[id] = probs[id];
        cum += probs[id];
        if (cum >= config.tau) break;
      }
      return renormalize(std::move(out));
    }
  }
  throw ConfigError("unreachable baseline kind");
}

TokenId baseline_step(const VocabLogits& logits, const BaselineConfig& config,
                      std::uint64_t seed) {
  std::vector<double> probs = baseline_distribution(logits, config);
  if (config.kind == BaselineKind::kGreedy) {
    return argmax_token(logits.values);
  }
  double u = rng::uniform_at(rng::substream(seed, rng::Stream::kBaseline));
  double cum = 0.0;
  TokenId last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = static_cast<TokenId>(i);
    cum += probs[i];
    if (u < cum) return last;
  }
  return last;
}

}  // namespace ead
