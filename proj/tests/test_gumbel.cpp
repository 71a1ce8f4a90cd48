#include <doctest.h>

#include <cmath>
#include <vector>

#include "ead/gumbel.hpp"
#include "ead/lm.hpp"
#include "ead/rng.hpp"
#include "ead/stats.hpp"

using namespace ead;

namespace {

VocabLogits logits_from_probs(const std::vector<double>& probs) {
  VocabLogits out;
  for (double p : probs) out.values.push_back(p > 0.0 ? std::log(p) : kNegInf);
  return out;
}

std::vector<long long> draw_histogram(const VocabLogits& logits, int n,
                                      std::uint64_t seed) {
  std::vector<long long> counts(logits.values.size(), 0);
  for (int t = 0; t < n; ++t) {
    ++counts[gumbel_max(logits, rng::mix(seed, t))];
  }
  return counts;
}

}  // namespace

TEST_CASE("single finite entry always wins") {
  VocabLogits logits(std::vector<double>{kNegInf, 0.0});
  for (int t = 0; t < 200; ++t) {
    CHECK(gumbel_max(logits, rng::mix(7, t)) == 1);
  }
}

TEST_CASE("gumbel max frequency matches the bias") {
  const int n = 100000;
  VocabLogits logits = logits_from_probs({0.7, 0.3});
  std::vector<long long> counts = draw_histogram(logits, n, 42);
  double freq = static_cast<double>(counts[0]) / n;
  CHECK(std::abs(freq - 0.7) < 0.005);  // 3 sigma and change
}

TEST_CASE("gumbel max GOF on a uniform target") {
  const int n = 100000;
  VocabLogits logits = logits_from_probs({0.25, 0.25, 0.25, 0.25});
  std::vector<long long> counts = draw_histogram(logits, n, 99);
  std::vector<double> expected(4, n / 4.0);
  CHECK(stats::chi_square_gof(counts, expected).p_value > 0.01);
}

TEST_CASE("truncated gumbel") {
  SUBCASE("vacuous bound reproduces the unconditional law") {
    const int n = 100000;
    std::vector<double> samples(n);
    rng::Sequence u(2024);
    for (int t = 0; t < n; ++t) {
      samples[t] = truncated_gumbel(0.0, kNegInf, u.next_uniform());
    }
    auto ks = stats::ks_test(samples, [](double x) { return gumbel_cdf(x); });
    CHECK(ks.p_value > 0.01);
  }
  SUBCASE("every draw strictly exceeds the bound") {
    rng::Sequence u(5);
    for (int t = 0; t < 20000; ++t) {
      double b = -3.0 + 6.0 * u.next_uniform();
      CHECK(truncated_gumbel(0.0, b, u.next_uniform()) > b);
    }
  }
  SUBCASE("conditional CDF matches the analytic form") {
    const int n = 100000;
    const double bound = 3.0;
    std::vector<double> samples(n);
    rng::Sequence u(77);
    for (int t = 0; t < n; ++t) {
      samples[t] = truncated_gumbel(0.0, bound, u.next_uniform());
    }
    double fb = gumbel_cdf(bound);
    auto ks = stats::ks_test(samples, [&](double x) {
      return (gumbel_cdf(x) - fb) / (1.0 - fb);
    });
    CHECK(ks.p_value > 0.01);
  }
}

TEST_CASE("lazy gumbel max") {
  SUBCASE("top_m = V is coupled to the eager sampler") {
    VocabLogits logits = logits_from_probs({0.5, 0.2, 0.2, 0.1});
    for (int t = 0; t < 2000; ++t) {
      std::uint64_t seed = rng::mix(31, t);
      LazyGumbelResult lazy = lazy_gumbel_max(logits, logits.size(), seed);
      CHECK(lazy.token == gumbel_max(logits, seed));
      CHECK(lazy.tail_drawn == 0);
    }
  }
  SUBCASE("GOF with a single eager slot") {
    const int n = 100000;
    VocabLogits logits = logits_from_probs({0.7, 0.2, 0.1});
    std::vector<long long> counts(3, 0);
    for (int t = 0; t < n; ++t) {
      ++counts[lazy_gumbel_max(logits, 1, rng::mix(8, t)).token];
    }
    std::vector<double> expected = {0.7 * n, 0.2 * n, 0.1 * n};
    CHECK(stats::chi_square_gof(counts, expected).p_value > 0.01);
  }
  SUBCASE("two-sample equivalence, lazy vs eager, random vocabularies") {
    rng::Sequence u(4242);
    for (int rep = 0; rep < 4; ++rep) {
      int vocab = 3 + static_cast<int>(u.next_below(14));  // V <= 16
      VocabLogits logits;
      for (int i = 0; i < vocab; ++i) {
        logits.values.push_back(3.0 * u.next_uniform());
      }
      int top_m = 1 + static_cast<int>(u.next_below(vocab));
      const int n = 100000;
      std::vector<long long> eager(vocab, 0), lazy(vocab, 0);
      for (int t = 0; t < n; ++t) {
        ++eager[gumbel_max(logits, rng::mix(1000 + rep, t))];
        ++lazy[lazy_gumbel_max(logits, top_m, rng::mix(2000 + rep, t)).token];
      }
      CHECK(stats::chi_square_two_sample(eager, lazy).p_value > 0.01);
    }
  }
  SUBCASE("peaked distribution instantiates a small fraction of the vocab") {
    const int vocab = 10000;
    std::vector<double> probs(vocab, 0.01 / (vocab - 1));
    probs[17] = 0.99;
    VocabLogits logits = logits_from_probs(probs);
    const int n = 500;
    double total_instantiated = 0.0;
    for (int t = 0; t < n; ++t) {
      LazyGumbelResult res = lazy_gumbel_max(logits, 32, rng::mix(3, t));
      total_instantiated += res.instantiated;
    }
    double mean = total_instantiated / n;
    MESSAGE("mean instantiation count: ", mean, " of V = ", vocab);
    CHECK(mean < 32 + 16);  // O(top_m), far below V
  }
  SUBCASE("fixed seed gives identical output and instantiation count") {
    VocabLogits logits = logits_from_probs({0.4, 0.3, 0.2, 0.1});
    LazyGumbelResult a = lazy_gumbel_max(logits, 2, 12345);
    LazyGumbelResult b = lazy_gumbel_max(logits, 2, 12345);
    CHECK(a.token == b.token);
    CHECK(a.instantiated == b.instantiated);
  }
}

TEST_CASE("both samplers pass GOF against softmax on random instances") {
  rng::Sequence u(909);
  for (int rep = 0; rep < 3; ++rep) {
    int vocab = 2 + static_cast<int>(u.next_below(15));
    VocabLogits logits;
    for (int i = 0; i < vocab; ++i) {
      logits.values.push_back(2.5 * u.next_uniform() - 1.0);
    }
    std::vector<double> probs = softmax(logits);
    const int n = 100000;
    std::vector<long long> eager(vocab, 0), lazy(vocab, 0);
    for (int t = 0; t < n; ++t) {
      ++eager[gumbel_max(logits, rng::mix(10 + rep, t))];
      ++lazy[lazy_gumbel_max(logits, std::min(4, vocab), rng::mix(20 + rep, t))
                 .token];
    }
    std::vector<double> expected(vocab);
    for (int i = 0; i < vocab; ++i) expected[i] = probs[i] * n;
    CHECK(stats::chi_square_gof(eager, expected).p_value > 0.01);
    CHECK(stats::chi_square_gof(lazy, expected).p_value > 0.01);
  }
}
