#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include "revkl/corpus/corpus.hpp"
#include "revkl/corpus/world.hpp"

namespace fs = std::filesystem;
using namespace revkl;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("revkl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("alpha follows the two-piece word weight") {
  CHECK(alpha(1) == doctest::Approx(0.0035258286877776).epsilon(1e-13));
  CHECK(alpha(50) == doctest::Approx(0.02).epsilon(1e-13));
  CHECK(alpha(51) == doctest::Approx(1.0 / 51.0).epsilon(1e-13));
  CHECK(alpha(1000) == doctest::Approx(1e-3).epsilon(1e-13));
  CHECK_THROWS_AS(alpha(0), std::invalid_argument);
  CHECK_THROWS_AS(alpha(1001), std::invalid_argument);
}

TEST_CASE("beta matches a hand-evaluated entry") {
  CHECK(beta(2, 1, 1) == doctest::Approx(0.2608474300122146).epsilon(1e-13));
  CHECK(beta(1, 1, 0) == doctest::Approx(1.0));
  for (int x = 0; x < 6; ++x) CHECK(beta(1000, 1, x) > 0.0);
}

TEST_CASE("xi is deterministic, uniform and keyed by seed") {
  CHECK(xi(7, 3, 4, 5) == xi(7, 3, 4, 5));
  std::array<int, 6> counts{};
  std::array<std::array<int, 6>, 6> cross{};
  int n = 0;
  for (WordId i = 1; i <= 100; ++i) {
    for (WordId j = 1; j <= 100; ++j) {
      for (WordId k = 1; k <= 100; ++k) {
        const int a = xi(1, i, j, k);
        const int b = xi(2, i, j, k);
        REQUIRE(a >= 0);
        REQUIRE(a <= 5);
        ++counts[a];
        ++cross[a][b];
        ++n;
      }
    }
  }
  for (int c : counts) CHECK(static_cast<double>(c) / n == doctest::Approx(1.0 / 6.0).epsilon(0.012));
  int agree = 0;
  for (int a = 0; a < 6; ++a) agree += cross[a][a];
  CHECK(static_cast<double>(agree) / n == doctest::Approx(1.0 / 6.0).epsilon(0.02));
}

TEST_CASE("conditional rows are normalized and favour small words near j") {
  const TrigramWorld world(1000, 3);
  const auto near_small = world.conditional_row(500, 5);
  const auto near_large = world.conditional_row(500, 900);
  CHECK(sum(near_small) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sum(near_large) == doctest::Approx(1.0).epsilon(1e-12));
  double small_a = 0.0;
  double small_b = 0.0;
  for (int k = 0; k < 20; ++k) {
    small_a += near_small[k];
    small_b += near_large[k];
  }
  CHECK(small_a > small_b);
  const double w = world.weight(2, 3, 4);
  CHECK(w == doctest::Approx(alpha(3) * beta(2, 3, world.xi(2, 3, 4)) * beta(4, 3, world.xi(2, 3, 4))));
  CHECK(world.conditional_row(2, 3)[3] == doctest::Approx(w / world.row_mass(2, 3)));
  CHECK_THROWS_AS(world.conditional_row(0, 3), std::invalid_argument);
}

TEST_CASE("start marginal is a distribution and its cache round-trips") {
  const fs::path dir = scratch_dir("marginal");
  const TrigramWorld world(160, 5, kDefaultGamma, 2);
  const auto& joint = world.start_marginal();
  REQUIRE(joint.size() == 160u * 160u);
  CHECK(sum(joint) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sum(world.first_word_marginal()) == doctest::Approx(1.0).epsilon(1e-12));
  world.save_start_marginal(dir / "m.bin");

  const TrigramWorld again(160, 5, kDefaultGamma, 2);
  again.load_start_marginal(dir / "m.bin");
  CHECK(again.start_marginal() == joint);

  const TrigramWorld other_seed(160, 6, kDefaultGamma, 2);
  CHECK_THROWS_AS(other_seed.load_start_marginal(dir / "m.bin"), std::runtime_error);
  const TrigramWorld other_steps(160, 5, kDefaultGamma, 0);
  CHECK_THROWS_AS(other_steps.load_start_marginal(dir / "m.bin"), std::runtime_error);
}

TEST_CASE("start steps of zero keep the row-mass joint") {
  const TrigramWorld world(160, 9);
  const auto& joint = world.start_marginal();
  double total = 0.0;
  for (WordId i = 1; i <= 160; ++i) {
    for (WordId j = 1; j <= 160; ++j) total += world.row_mass(i, j);
  }
  CHECK(joint[(4 - 1) * 160 + (7 - 1)] == doctest::Approx(world.row_mass(4, 7) / total).epsilon(1e-12));
}

TEST_CASE("true conditional covers all three context kinds") {
  const TrigramWorld world(160, 11, kDefaultGamma, 1);
  const std::vector<WordId> first{kStartToken};
  CHECK(world.true_conditional(first) == world.first_word_marginal());

  const std::vector<WordId> second{kStartToken, 9};
  const auto p2 = world.true_conditional(second);
  CHECK(sum(p2) == doctest::Approx(1.0).epsilon(1e-12));
  const auto& joint = world.start_marginal();
  CHECK(p2[3] == doctest::Approx(joint[(9 - 1) * 160 + 3] / world.first_word_marginal()[8]).epsilon(1e-12));

  const std::vector<WordId> later{kStartToken, 9, 4, 17};
  CHECK(world.true_conditional(later) == world.conditional_row(4, 17));
  const std::vector<WordId> bad{5, 9};
  CHECK_THROWS_AS(world.true_conditional(bad), std::invalid_argument);
}

TEST_CASE("corpus sampling is reproducible and well formed") {
  const TrigramWorld world(160, 2, kDefaultGamma, 1);
  const SplitSizes sizes{300, 50, 40};
  const TokenCorpus a = sample_corpus(world, sizes, 99);
  const TokenCorpus b = sample_corpus(world, sizes, 99);
  const TokenCorpus c = sample_corpus(world, sizes, 100);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train != c.train);
  CHECK(a.train.size() == 300u);
  CHECK(a.valid.size() == 50u);
  CHECK(a.test.size() == 40u);
  validate_sentences(a.train, 160);
  CHECK(a.frequency == count_frequencies(a.train, 160));
  CHECK(a.frequency[0] == 0);
  CHECK(std::accumulate(a.frequency.begin(), a.frequency.end(), std::int64_t{0}) == 3000);
}

TEST_CASE("corpus files round-trip") {
  const fs::path dir = scratch_dir("corpus");
  const TrigramWorld world(160, 2);
  const TokenCorpus a = sample_corpus(world, {20, 5, 5}, 4);
  save_corpus(a, dir);
  const TokenCorpus b = load_corpus(dir);
  CHECK(b.train == a.train);
  CHECK(b.valid == a.valid);
  CHECK(b.test == a.test);
  CHECK(b.frequency == a.frequency);
  CHECK(b.world_seed == a.world_seed);
  CHECK(b.rng_seed == a.rng_seed);
}

TEST_CASE("malformed sentences are rejected") {
  Sentence s{};
  s.fill(1);
  s[0] = kStartToken;
  std::vector<Sentence> ok{s};
  CHECK_NOTHROW(validate_sentences(ok, 10));
  Sentence no_start = s;
  no_start[0] = 3;
  std::vector<Sentence> bad1{no_start};
  CHECK_THROWS_AS(validate_sentences(bad1, 10), std::invalid_argument);
  Sentence inner_start = s;
  inner_start[4] = kStartToken;
  std::vector<Sentence> bad2{inner_start};
  CHECK_THROWS_AS(validate_sentences(bad2, 10), std::invalid_argument);
  Sentence out_of_range = s;
  out_of_range[2] = 11;
  std::vector<Sentence> bad3{out_of_range};
  CHECK_THROWS_AS(validate_sentences(bad3, 10), std::invalid_argument);
}

TEST_CASE("word classes break ties by smaller id and shares add up") {
  // Twenty sentences use every word once; words 7 and 200 get four extra
  // occurrences each.
  TokenCorpus corpus;
  corpus.vocab_size = 200;
  for (int s = 0; s < 20; ++s) {
    Sentence sentence{};
    for (int t = 1; t < kSentenceTokens; ++t) sentence[t] = s * 10 + t;
    corpus.train.push_back(sentence);
  }
  Sentence extra{};
  for (int t = 1; t < kSentenceTokens; ++t) extra[t] = t % 2 == 0 ? 7 : 200;
  extra[9] = 1;
  extra[10] = 2;
  corpus.train.push_back(extra);
  corpus.frequency = count_frequencies(corpus.train, 200);
  REQUIRE(corpus.frequency[7] == 5);
  REQUIRE(corpus.frequency[200] == 5);
  const WordClassPartition part = word_stats(corpus);
  CHECK(part.word_at_rank(1) == 7);
  CHECK(part.word_at_rank(2) == 200);
  CHECK(part.word_at_rank(3) == 1);
  CHECK(part.word_at_rank(5) == 3);
  CHECK(part.frequent.size() == 50u);
  CHECK(part.almost_frequent.size() == 100u);
  CHECK(part.rare.size() == 150u);
  CHECK(part.is_frequent(200));
  CHECK(part.is_rare(199));
  const FrequencyShares shares = frequency_shares(corpus, part);
  CHECK(shares.frequent + shares.almost_frequent + shares.rest == doctest::Approx(1.0));
  CHECK(shares.frequent == doctest::Approx(60.0 / 210.0));
}
