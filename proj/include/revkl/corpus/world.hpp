#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace revkl {

// Word ids: 0 is the sentence-start token, real words are 1..vocab_size.
using WordId = int;
inline constexpr WordId kStartToken = 0;
inline constexpr int kMaxVocab = 1000;
inline constexpr double kDefaultGamma = 0.75;

// Per-word weight: (1/50) * log(j+1)/log(51) for j <= 50, 1/j otherwise.
// Throws std::invalid_argument unless 1 <= j <= kMaxVocab.
double alpha(WordId j);

// Keyed pseudo-random function of (seed, i, j, k), uniform over {0, ..., 5}.
int xi(std::uint64_t seed, WordId i, WordId j, WordId k) noexcept;

// (i * (|i - j + xi| + 1))^(-gamma).
double beta(WordId i, WordId j, int xi_val, double gamma = kDefaultGamma);

// Synthetic second-order Markov source. A trigram (i, j, k) has weight
// alpha(j) * beta(i, j; x) * beta(k, j; x) where x = xi(seed, i, j, k) is one
// draw shared by both beta factors.
class TrigramWorld {
 public:
  // `start_steps` advances the start-pair distribution by that many trigram
  // transitions; 0 keeps P(i, j) proportional to row_mass(i, j).
  TrigramWorld(int vocab_size, std::uint64_t seed, double gamma = kDefaultGamma, int start_steps = 0);

  int vocab_size() const noexcept { return vocab_size_; }
  std::uint64_t seed() const noexcept { return seed_; }
  double gamma() const noexcept { return gamma_; }
  int start_steps() const noexcept { return start_steps_; }

  int xi(WordId i, WordId j, WordId k) const noexcept;
  // Unnormalized trigram weight.
  double weight(WordId i, WordId j, WordId k) const;

  // Distribution of the next word k given the two previous words (i, j).
  // out[k - 1] = P(k | i, j); out must have vocab_size entries.
  void conditional_row(WordId i, WordId j, std::span<double> out) const;
  std::vector<double> conditional_row(WordId i, WordId j) const;
  // Sum over k of weight(i, j, k), evaluated in increasing k.
  double row_mass(WordId i, WordId j) const;

  // Joint distribution of the first two words; entry (i - 1) * V + (j - 1).
  // Starts from P(i, j) proportional to row_mass(i, j), then takes
  // start_steps() exact transitions (i, j) -> (j, k). Built on first use.
  const std::vector<double>& start_marginal() const;
  bool has_start_marginal() const noexcept { return !start_marginal_.empty(); }
  void build_start_marginal(int threads = 1) const;

  // Cache: JSON header {seed, gamma, vocab_size, start_steps} + V*V
  // little-endian doubles.
  void save_start_marginal(const std::filesystem::path& path) const;
  // Throws std::runtime_error if the header does not match this world.
  void load_start_marginal(const std::filesystem::path& path) const;

  // True next-word distribution given a sentence prefix that begins with the
  // start token. out[w - 1] = p(w | context).
  void true_conditional(std::span<const WordId> context, std::span<double> out) const;
  std::vector<double> true_conditional(std::span<const WordId> context) const;

  // P(w1), the first-word marginal.
  const std::vector<double>& first_word_marginal() const;

 private:
  void check_word(WordId w) const;
  const double* beta_entry(WordId a, WordId j) const noexcept {
    return &beta_table_[(static_cast<std::size_t>(a - 1) * vocab_size_ + (j - 1)) * 6];
  }

  int vocab_size_;
  std::uint64_t seed_;
  double gamma_;
  int start_steps_;
  std::vector<double> alpha_table_;  // index j - 1
  std::vector<double> beta_table_;   // [(a - 1) * V + (j - 1)] * 6 + xi
  mutable std::vector<double> start_marginal_;
  mutable std::vector<double> first_word_;
};

}  // namespace revkl
