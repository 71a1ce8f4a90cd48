#include <doctest.h>

#include <cmath>
#include <vector>

#include "ead/calibrate.hpp"
#include "ead/entropy.hpp"
#include "ead/lm.hpp"
#include "ead/rng.hpp"

using namespace ead;

namespace {

const double kCoinH = -(0.7 * std::log(0.7) + 0.3 * std::log(0.3));

std::vector<Prefix> sample_sequences(const LanguageModel& model, int count,
                                     int length, std::uint64_t seed) {
  std::vector<Prefix> out;
  for (int s = 0; s < count; ++s) {
    Prefix seq;
    rng::Sequence u(rng::mix(seed, s));
    for (int t = 0; t < length; ++t) {
      seq.push_back(sample_token(model.next_logits(seq), u.next_uniform()));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace

TEST_CASE("mu_p estimation") {
  SUBCASE("coin data at k=1 is the constant step entropy") {
    CoinModel coin(0.7);
    std::vector<Prefix> heldout = sample_sequences(coin, 4, 25, 1);
    MomentTarget target = estimate_mu_p(coin, heldout, 1, 2, 9);
    CHECK(target.mu_p == doctest::Approx(kCoinH).epsilon(1e-12));
    CHECK(target.n_samples == 100);
    CHECK(target.std_err == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("deterministic model and data give zero") {
    CoinModel sure(1.0);
    std::vector<Prefix> heldout = {Prefix(10, 0)};
    MomentTarget target = estimate_mu_p(sure, heldout, 3, 2, 2);
    CHECK(target.mu_p == 0.0);
  }
  SUBCASE("single position reports zero standard error") {
    CoinModel coin(0.5);
    std::vector<Prefix> heldout = {Prefix{0}};
    MomentTarget target = estimate_mu_p(coin, heldout, 1, 2, 3);
    CHECK(target.n_samples == 1);
    CHECK(target.std_err == 0.0);
  }
  SUBCASE("empty data rejected") {
    CoinModel coin(0.5);
    CHECK_THROWS_AS(estimate_mu_p(coin, {}, 1, 2, 3), ConfigError);
  }
}

TEST_CASE("mu_alpha estimation") {
  MarkovModel chain({{0.9, 0.1}, {0.5, 0.5}}, {0.5, 0.5});
  std::vector<Prefix> prompts = sample_sequences(chain, 3, 15, 4);

  SUBCASE("alpha = 0 is the plain mean of H over draws") {
    MomentSamples samples = collect_moment_samples(chain, prompts, 2, 2, 8, 5);
    double plain = 0.0;
    long count = 0;
    for (const auto& items : samples.positions) {
      double mean = 0.0;
      for (const auto& it : items) mean += it.entropy;
      plain += mean / items.size();
      ++count;
    }
    plain /= count;
    CHECK(mu_alpha_from_samples(samples, 0.0).value ==
          doctest::Approx(plain).epsilon(1e-12));
  }
  SUBCASE("constant-entropy model: weights cancel for every alpha") {
    CoinModel coin(0.7);
    std::vector<Prefix> coin_prompts = sample_sequences(coin, 2, 10, 6);
    for (double alpha : {-1.0, 0.0, 0.7, 2.0}) {
      // k=1: the one-step entropy is the same constant for both candidates
      MuAlpha mu = estimate_mu_alpha(coin, coin_prompts, alpha, 1, 2, 4, 7);
      CHECK(mu.value == doctest::Approx(kCoinH).epsilon(1e-12));
    }
  }
  SUBCASE("exact enumeration matches the closed-form reweighting") {
    // one-step model, V=4: mu_alpha = sum H_i q_i e^{-aH_i} / sum q_i e^{-aH_i}
    std::vector<std::vector<double>> rows = {{0.4, 0.3, 0.2, 0.1},
                                             {0.7, 0.1, 0.1, 0.1},
                                             {0.25, 0.25, 0.25, 0.25},
                                             {0.1, 0.2, 0.3, 0.4}};
    MarkovModel model(rows, {0.4, 0.3, 0.2, 0.1});
    std::vector<Prefix> one_pos = {Prefix{2}};  // single position, prefix {}
    // use the first position only: prefix is empty, candidates enumerate V
    MomentSamples samples = collect_moment_samples(model, one_pos, 1, 1, 0, 8);
    REQUIRE(samples.positions.size() == 1);
    double alpha = 0.5;
    double num = 0.0, den = 0.0;
    std::vector<double> q = softmax(model.next_logits({}));
    for (TokenId y = 0; y < 4; ++y) {
      double h = step_entropy(model.next_logits({y}));
      num += h * q[y] * std::exp(-alpha * h);
      den += q[y] * std::exp(-alpha * h);
    }
    CHECK(mu_alpha_from_samples(samples, alpha).value ==
          doctest::Approx(num / den).epsilon(1e-12));
  }
  SUBCASE("importance sampling needs at least two rollouts") {
    CHECK_THROWS_AS(estimate_mu_alpha(chain, prompts, 0.0, 1, 2, 1, 9),
                    ConfigError);
  }
}

TEST_CASE("monotonicity under common random numbers") {
  MarkovModel chain({{0.85, 0.15}, {0.3, 0.7}}, {0.5, 0.5});
  std::vector<Prefix> prompts = sample_sequences(chain, 4, 20, 44);
  MomentSamples samples = collect_moment_samples(chain, prompts, 2, 2, 0, 45);

  double previous = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 20; ++i) {
    double alpha = -2.0 + 4.0 * i / 19.0;
    double mu = mu_alpha_from_samples(samples, alpha).value;
    CHECK(mu <= previous + 1e-12);  // mu_alpha nonincreasing
    previous = mu;
  }
}

TEST_CASE("fit_alpha") {
  MarkovModel chain({{0.9, 0.1}, {0.5, 0.5}}, {0.5, 0.5});
  SUBCASE("self-data root is near zero") {
    // Row entropies spread wide so the moment curve has a strong slope and
    // the root is pinned tightly by the data.
    MarkovModel spread({{0.96, 0.02, 0.02},
                        {1.0 / 3, 1.0 / 3, 1.0 / 3},
                        {0.70, 0.20, 0.10}},
                       {1.0 / 3, 1.0 / 3, 1.0 / 3});
    std::vector<Prefix> heldout = sample_sequences(spread, 150, 80, 10);
    FitOptions options;
    CalibrationResult result =
        fit_alpha(spread, heldout, {}, 2, 2, options, 11);
    CHECK(std::abs(result.alpha_star) <= 0.05);
    CHECK(std::abs(result.mu_p - result.mu_at_alpha_star) <=
          options.tol + 3.0 * result.std_err_combined + 1e-9);
  }
  SUBCASE("low-entropy data forces a positive root") {
    // Realized tokens favor the model's low-entropy state more than the
    // model itself does, so mu_p falls below the untilted moment while
    // staying strictly above its infimum.
    MarkovModel low({{0.97, 0.03}, {0.97, 0.03}}, {0.97, 0.03});
    std::vector<Prefix> heldout = sample_sequences(low, 30, 60, 12);
    CalibrationResult result =
        fit_alpha(chain, heldout, {}, 2, 2, FitOptions{}, 13);
    CHECK(result.alpha_star > 0.0);
  }
  SUBCASE("high-entropy data forces a negative root") {
    MarkovModel high({{0.5, 0.5}, {0.5, 0.5}}, {0.5, 0.5});
    std::vector<Prefix> heldout = sample_sequences(high, 30, 60, 14);
    CalibrationResult result =
        fit_alpha(chain, heldout, {}, 2, 2, FitOptions{}, 15);
    CHECK(result.alpha_star < 0.0);
  }
  SUBCASE("constant-entropy model is flagged degenerate") {
    CoinModel coin(0.7);
    std::vector<Prefix> heldout = sample_sequences(coin, 4, 20, 16);
    CalibrationResult result =
        fit_alpha(coin, heldout, {}, 1, 2, FitOptions{}, 17);
    CHECK(result.degenerate);
    CHECK(result.alpha_star == 0.0);
  }
  SUBCASE("no sign change raises a calibration error") {
    // Data realized entirely at the lower-entropy candidate: mu_p equals the
    // infimum of mu_alpha, which finite alpha never attains, so g stays
    // negative across the whole (capped) bracket.
    MarkovModel model({{0.7, 0.3}, {0.5, 0.5}}, {0.7, 0.3});
    std::vector<Prefix> heldout = {Prefix(40, 0)};
    FitOptions options;
    options.bracket_cap = 4.0;
    CHECK_THROWS_AS((void)fit_alpha(model, heldout, {}, 1, 1, options, 19),
                    CalibrationError);
  }
}

TEST_CASE("tilted cross-entropy") {
  // Wide spread of row entropies gives the moment curve a strong slope, so
  // the fitted root sits close to the exact cross-entropy minimizer.
  MarkovModel model({{0.96, 0.02, 0.02},
                     {1.0 / 3, 1.0 / 3, 1.0 / 3},
                     {0.70, 0.20, 0.10}},
                    {1.0 / 3, 1.0 / 3, 1.0 / 3});
  MarkovModel source({{0.90, 0.05, 0.05},
                      {0.80, 0.15, 0.05},
                      {0.85, 0.05, 0.10}},
                     {1.0, 0.0, 0.0});
  std::vector<Prefix> heldout = sample_sequences(source, 150, 80, 21);

  SUBCASE("alpha = 0 is the plain held-out cross-entropy") {
    double plain = 0.0;
    long n = 0;
    for (const Prefix& seq : heldout) {
      Prefix prefix;
      for (TokenId tok : seq) {
        plain += -log_softmax(model.next_logits(prefix))[tok];
        prefix.push_back(tok);
        ++n;
      }
    }
    plain /= n;
    CHECK(cross_entropy_of_tilted(model, heldout, 0.0, 2, 2, 22) ==
          doctest::Approx(plain).epsilon(1e-12));
  }
  SUBCASE("the fitted tilt does not worsen the cross-entropy") {
    CalibrationResult fit = fit_alpha(model, heldout, {}, 2, 2, FitOptions{}, 23);
    double ce_star =
        cross_entropy_of_tilted(model, heldout, fit.alpha_star, 2, 2, 24);
    double ce_zero = cross_entropy_of_tilted(model, heldout, 0.0, 2, 2, 24);
    CHECK(ce_star <= ce_zero + 1e-9);
  }
  SUBCASE("convexity probe around the root") {
    CalibrationResult fit = fit_alpha(model, heldout, {}, 2, 2, FitOptions{}, 25);
    double ce_star =
        cross_entropy_of_tilted(model, heldout, fit.alpha_star, 2, 2, 26);
    double ce_plus = cross_entropy_of_tilted(model, heldout,
                                             fit.alpha_star + 0.1, 2, 2, 26);
    double ce_minus = cross_entropy_of_tilted(model, heldout,
                                              fit.alpha_star - 0.1, 2, 2, 26);
    CHECK(ce_star <= ce_plus + 1e-9);
    CHECK(ce_star <= ce_minus + 1e-9);
  }
}
