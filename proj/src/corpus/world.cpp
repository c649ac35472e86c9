#include "revkl/corpus/world.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "revkl/binio.hpp"
#include "revkl/rng.hpp"

namespace revkl {

double alpha(WordId j) {
  if (j < 1 || j > kMaxVocab) {
    throw std::invalid_argument("alpha: word id out of range: " + std::to_string(j));
  }
  if (j <= 50) return (1.0 / 50.0) * std::log(static_cast<double>(j) + 1.0) / std::log(51.0);
  return 1.0 / static_cast<double>(j);
}

int xi(std::uint64_t seed, WordId i, WordId j, WordId k) noexcept {
  const std::uint64_t key = (static_cast<std::uint64_t>(i) << 40) |
                            (static_cast<std::uint64_t>(j) << 20) | static_cast<std::uint64_t>(k);
  const std::uint64_t h = mix64(mix64(seed) ^ key);
  return static_cast<int>(((h >> 32) * 6) >> 32);
}

double beta(WordId i, WordId j, int xi_val, double gamma) {
  const double base = static_cast<double>(i) * (std::abs(i - j + xi_val) + 1.0);
  return std::pow(base, -gamma);
}

TrigramWorld::TrigramWorld(int vocab_size, std::uint64_t seed, double gamma, int start_steps)
    : vocab_size_(vocab_size), seed_(seed), gamma_(gamma), start_steps_(start_steps) {
  if (vocab_size < 2 || vocab_size > kMaxVocab) {
    throw std::invalid_argument("vocab_size must lie in [2, " + std::to_string(kMaxVocab) + "]");
  }
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (start_steps < 0) throw std::invalid_argument("start_steps must be non-negative");
  alpha_table_.resize(vocab_size_);
  for (WordId j = 1; j <= vocab_size_; ++j) alpha_table_[j - 1] = alpha(j);
  const auto v = static_cast<std::size_t>(vocab_size_);
  beta_table_.resize(v * v * 6);
  for (WordId a = 1; a <= vocab_size_; ++a) {
    for (WordId j = 1; j <= vocab_size_; ++j) {
      for (int x = 0; x < 6; ++x) {
        beta_table_[((a - 1) * v + (j - 1)) * 6 + x] = beta(a, j, x, gamma_);
      }
    }
  }
}

void TrigramWorld::check_word(WordId w) const {
  if (w < 1 || w > vocab_size_) {
    throw std::invalid_argument("word id out of range: " + std::to_string(w));
  }
}

int TrigramWorld::xi(WordId i, WordId j, WordId k) const noexcept { return revkl::xi(seed_, i, j, k); }

double TrigramWorld::weight(WordId i, WordId j, WordId k) const {
  check_word(i);
  check_word(j);
  check_word(k);
  const int x = xi(i, j, k);
  return alpha_table_[j - 1] * beta_entry(i, j)[x] * beta_entry(k, j)[x];
}

double TrigramWorld::row_mass(WordId i, WordId j) const {
  check_word(i);
  check_word(j);
  const double* left = beta_entry(i, j);
  const double a = alpha_table_[j - 1];
  double sum = 0.0;
  for (WordId k = 1; k <= vocab_size_; ++k) {
    const int x = xi(i, j, k);
    sum += a * left[x] * beta_entry(k, j)[x];
  }
  return sum;
}

void TrigramWorld::conditional_row(WordId i, WordId j, std::span<double> out) const {
  check_word(i);
  check_word(j);
  if (out.size() != static_cast<std::size_t>(vocab_size_)) {
    throw std::invalid_argument("conditional_row: output size mismatch");
  }
  const double* left = beta_entry(i, j);
  const double a = alpha_table_[j - 1];
  double sum = 0.0;
  for (WordId k = 1; k <= vocab_size_; ++k) {
    const int x = xi(i, j, k);
    const double w = a * left[x] * beta_entry(k, j)[x];
    out[k - 1] = w;
    sum += w;
  }
  for (double& w : out) w /= sum;
}

std::vector<double> TrigramWorld::conditional_row(WordId i, WordId j) const {
  std::vector<double> row(vocab_size_);
  conditional_row(i, j, row);
  return row;
}

void TrigramWorld::build_start_marginal(int threads) const {
  if (!start_marginal_.empty()) return;
  const auto v = static_cast<std::size_t>(vocab_size_);
  std::vector<double> mass(v * v);
  // Rows are independent; each row_mass is a fixed sequential reduction, so the
  // result does not depend on the worker count.
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads > 0 ? threads : 1)
  for (int i = 1; i <= vocab_size_; ++i) {
    for (WordId j = 1; j <= vocab_size_; ++j) {
      mass[(i - 1) * v + (j - 1)] = row_mass(i, j);
    }
  }
  std::vector<double> joint(mass);
  double total = 0.0;
  for (double m : joint) total += m;
  for (double& m : joint) m /= total;

  // One transition: next(j, k) = sum_i joint(i, j) * P(k | i, j). Columns j are
  // independent and each sums over i in a fixed order.
  std::vector<double> next(v * v);
  for (int step = 0; step < start_steps_; ++step) {
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads > 0 ? threads : 1)
    for (int j = 1; j <= vocab_size_; ++j) {
      double* out = &next[(j - 1) * v];
      std::fill(out, out + v, 0.0);
      const double a = alpha_table_[j - 1];
      for (WordId i = 1; i <= vocab_size_; ++i) {
        const std::size_t ij = (i - 1) * v + (j - 1);
        if (joint[ij] == 0.0) continue;
        const double c = joint[ij] / mass[ij];
        const double* left = beta_entry(i, j);
        for (WordId k = 1; k <= vocab_size_; ++k) {
          const int x = xi(i, j, k);
          out[k - 1] += c * a * left[x] * beta_entry(k, j)[x];
        }
      }
    }
    joint.swap(next);
  }
  start_marginal_ = std::move(joint);
  first_word_.clear();
}

const std::vector<double>& TrigramWorld::start_marginal() const {
  if (start_marginal_.empty()) build_start_marginal();
  return start_marginal_;
}

const std::vector<double>& TrigramWorld::first_word_marginal() const {
  if (first_word_.empty()) {
    const auto& joint = start_marginal();
    const auto v = static_cast<std::size_t>(vocab_size_);
    std::vector<double> first(v, 0.0);
    for (std::size_t i = 0; i < v; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < v; ++j) sum += joint[i * v + j];
      first[i] = sum;
    }
    double total = 0.0;
    for (double p : first) total += p;
    for (double& p : first) p /= total;
    first_word_ = std::move(first);
  }
  return first_word_;
}

void TrigramWorld::save_start_marginal(const std::filesystem::path& path) const {
  const nlohmann::json header = {{"format", "revkl-start-marginal"},
                                 {"version", 1},
                                 {"seed", seed_},
                                 {"gamma", gamma_},
                                 {"vocab_size", vocab_size_},
                                 {"start_steps", start_steps_}};
  write_header_and_doubles(path, header, start_marginal());
}

void TrigramWorld::load_start_marginal(const std::filesystem::path& path) const {
  auto data = read_header_and_doubles(path);
  const auto& h = data.header;
  if (h.value("format", "") != "revkl-start-marginal" || h.value("seed", std::uint64_t{0}) != seed_ ||
      h.value("gamma", 0.0) != gamma_ || h.value("vocab_size", 0) != vocab_size_ ||
      h.value("start_steps", -1) != start_steps_) {
    throw std::runtime_error("start-marginal cache does not match world: " + path.string());
  }
  const auto v = static_cast<std::size_t>(vocab_size_);
  if (data.values.size() != v * v) {
    throw std::runtime_error("start-marginal cache has wrong length: " + path.string());
  }
  start_marginal_ = std::move(data.values);
  first_word_.clear();
}

void TrigramWorld::true_conditional(std::span<const WordId> context, std::span<double> out) const {
  if (context.empty()) throw std::invalid_argument("true_conditional: empty context");
  if (context.front() != kStartToken) {
    throw std::invalid_argument("true_conditional: context must begin with the start token");
  }
  const auto v = static_cast<std::size_t>(vocab_size_);
  if (out.size() != v) throw std::invalid_argument("true_conditional: output size mismatch");
  for (std::size_t t = 1; t < context.size(); ++t) check_word(context[t]);

  if (context.size() == 1) {
    const auto& first = first_word_marginal();
    std::copy(first.begin(), first.end(), out.begin());
    return;
  }
  if (context.size() == 2) {
    const auto& joint = start_marginal();
    const std::size_t i = static_cast<std::size_t>(context[1] - 1);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      out[j] = joint[i * v + j];
      sum += out[j];
    }
    for (double& p : out) p /= sum;
    return;
  }
  conditional_row(context[context.size() - 2], context[context.size() - 1], out);
}

std::vector<double> TrigramWorld::true_conditional(std::span<const WordId> context) const {
  std::vector<double> row(vocab_size_);
  true_conditional(context, row);
  return row;
}

}  // namespace revkl
