#include <doctest.h>

#include <cmath>
#include <cstring>

#include "ead/lm.hpp"
#include "ead/rng.hpp"

using namespace ead;

TEST_CASE("coin model emits the exact bias") {
  CoinModel coin(0.7);
  VocabLogits logits = coin.next_logits({});
  std::vector<double> probs = softmax(logits);
  CHECK(probs[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(probs[1] == doctest::Approx(0.3).epsilon(1e-12));

  // Any prefix gives the same conditional.
  std::vector<double> probs2 = softmax(coin.next_logits({0, 1, 1, 0}));
  CHECK(probs2[0] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("uniform markov chain is uniform after any prefix") {
  MarkovModel chain = MarkovModel::uniform(2);
  for (const Prefix& prefix : {Prefix{}, Prefix{0}, Prefix{1, 0, 1}}) {
    std::vector<double> probs = softmax(chain.next_logits(prefix));
    CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("ngram MLE matches the count oracle") {
  SUBCASE("single-symbol corpus") {
    std::vector<TokenId> corpus = {0, 0, 0, 0};
    NgramModel model = train_ngram(corpus, 1, 0.0, 2);
    std::vector<double> probs = softmax(model.next_logits({0}));
    CHECK(probs[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("alternating corpus") {
    std::vector<TokenId> corpus = {0, 1, 0, 1};  // "abab"
    NgramModel model = train_ngram(corpus, 1, 0.0, 2);
    CHECK(softmax(model.next_logits({0}))[1] == doctest::Approx(1.0));
    CHECK(softmax(model.next_logits({1}))[0] == doctest::Approx(1.0));
  }
  SUBCASE("additive smoothing") {
    std::vector<TokenId> corpus = {0, 1};  // "ab"
    NgramModel model = train_ngram(corpus, 1, 1.0, 2);
    // after 'a': (1 + 1) / (1 + 2)
    CHECK(softmax(model.next_logits({0}))[1] ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("trained on text, prefix ending 'a' predicts 'b'") {
    std::string text = "abababababababababababab";
    TokenizedText corpus = tokenize_text(text, TokenizerKind::kByte);
    NgramModel model =
        train_ngram(corpus.tokens, 1, 0.0, corpus.table.size());
    TokenId a = *corpus.table.lookup("a");
    TokenId b = *corpus.table.lookup("b");
    CHECK(softmax(model.next_logits({a}))[b] >= 0.99);
  }
  SUBCASE("empty corpus rejected") {
    std::vector<TokenId> corpus;
    CHECK_THROWS_AS(train_ngram(corpus, 1, 0.0, 2), ConfigError);
  }
}

TEST_CASE("exact sequence distribution") {
  SUBCASE("coin at horizon 2") {
    CoinModel coin(0.7);
    SequenceDistribution dist = exact_sequence_distribution(coin, {}, 2);
    REQUIRE(dist.size() == 4);
    CHECK(dist.probs[dist.encode(std::vector<TokenId>{0, 0})] ==
          doctest::Approx(0.49).epsilon(1e-12));
    CHECK(dist.probs[dist.encode(std::vector<TokenId>{0, 1})] ==
          doctest::Approx(0.21).epsilon(1e-12));
    CHECK(dist.probs[dist.encode(std::vector<TokenId>{1, 0})] ==
          doctest::Approx(0.21).epsilon(1e-12));
    CHECK(dist.probs[dist.encode(std::vector<TokenId>{1, 1})] ==
          doctest::Approx(0.09).epsilon(1e-12));
  }
  SUBCASE("horizon 0 is the empty product") {
    CoinModel coin(0.3);
    SequenceDistribution dist = exact_sequence_distribution(coin, {0, 1}, 0);
    REQUIRE(dist.size() == 1);
    CHECK(dist.probs[0] == doctest::Approx(1.0));
  }
  SUBCASE("uniform three-way at horizon 1") {
    MarkovModel chain = MarkovModel::uniform(3);
    SequenceDistribution dist = exact_sequence_distribution(chain, {}, 1);
    REQUIRE(dist.size() == 3);
    for (double p : dist.probs) CHECK(p == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("cap exceeded") {
    MarkovModel chain = MarkovModel::uniform(4);
    CHECK_THROWS_AS(exact_sequence_distribution(chain, {}, 4, 100),
                    EnumerationCapError);
  }
}

TEST_CASE("distribution validity across the zoo") {
  std::vector<TokenId> corpus = {0, 1, 2, 0, 1, 2, 2, 1, 0, 0, 1};
  NgramModel ngram = train_ngram(corpus, 2, 0.5, 3);
  MarkovModel chain({{0.9, 0.1}, {0.5, 0.5}}, {0.5, 0.5});
  CoinModel coin(0.25);
  const LanguageModel* models[] = {&ngram, &chain, &coin};

  rng::Sequence u(12345);
  for (const LanguageModel* model : models) {
    int vocab = model->descriptor().vocab_size;
    for (int rep = 0; rep < 20; ++rep) {
      Prefix prefix;
      int len = static_cast<int>(u.next_below(5));
      for (int t = 0; t < len; ++t) {
        prefix.push_back(static_cast<TokenId>(u.next_below(vocab)));
      }
      std::vector<double> probs = softmax(model->next_logits(prefix));
      double total = 0.0;
      for (double p : probs) {
        CHECK(p >= 0.0);
        total += p;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("enumeration equals the product chain of conditionals") {
  // max deviation <= 1e-9 for V <= 4, horizons up to 5
  std::vector<TokenId> corpus = {0, 1, 2, 3, 1, 2, 0, 3, 2, 1, 0, 2, 3};
  NgramModel ngram = train_ngram(corpus, 1, 0.25, 4);
  for (int horizon = 1; horizon <= 5; ++horizon) {
    SequenceDistribution dist = exact_sequence_distribution(ngram, {1}, horizon);
    double total = 0.0;
    for (std::size_t idx = 0; idx < dist.size(); ++idx) {
      std::vector<TokenId> path = dist.decode(idx);
      Prefix prefix = {1};
      double logp = 0.0;
      for (TokenId tok : path) {
        logp += log_softmax(ngram.next_logits(prefix))[tok];
        prefix.push_back(tok);
      }
      CHECK(std::abs(dist.probs[idx] - std::exp(logp)) <= 1e-9);
      total += dist.probs[idx];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("next_logits is referentially transparent") {
  std::vector<TokenId> corpus = {0, 1, 2, 0, 2, 1, 0, 1};
  NgramModel model = train_ngram(corpus, 2, 0.1, 3);
  Prefix prefix = {0, 1};
  VocabLogits a = model.next_logits(prefix);
  VocabLogits b = model.next_logits(prefix);
  REQUIRE(a.values.size() == b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    // bit-for-bit
    CHECK(std::memcmp(&a.values[i], &b.values[i], sizeof(double)) == 0);
  }
}

TEST_CASE("context overflow is reported") {
  CoinModel coin(0.5, 4);
  Prefix prefix = {0, 1, 0, 1};
  CHECK_THROWS_AS(coin.next_logits(prefix), ContextOverflowError);
}

TEST_CASE("tokenizers round-trip") {
  SUBCASE("byte") {
    TokenizedText corpus = tokenize_text("hello", TokenizerKind::kByte);
    CHECK(corpus.tokens.size() == 5);
    CHECK(detokenize(corpus.table, corpus.tokens, TokenizerKind::kByte) ==
          "hello");
  }
  SUBCASE("whitespace") {
    TokenizedText corpus =
        tokenize_text("the cat  sat", TokenizerKind::kWhitespace);
    CHECK(corpus.tokens.size() == 3);
    CHECK(detokenize(corpus.table, corpus.tokens, TokenizerKind::kWhitespace) ==
          "the cat sat");
  }
  SUBCASE("unknown symbol rejected") {
    TokenizedText corpus = tokenize_text("ab", TokenizerKind::kByte);
    CHECK_THROWS_AS(tokenize_with(corpus.table, "abc", TokenizerKind::kByte),
                    ConfigError);
  }
}
