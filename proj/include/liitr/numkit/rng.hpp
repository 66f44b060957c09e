#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace liitr {

// Seeded pseudo-random stream. Child streams are keyed by (seed, label) so
// per-subject work does not depend on the order in which subjects run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  Rng child(std::string_view label) const;

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();                        // N(0, 1)
  double normal(double mean, double sd);
  bool bernoulli(double p);
  std::size_t index(std::size_t n);       // uniform in [0, n)
  void shuffle(std::vector<std::size_t>& idx);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view label);

}  // namespace liitr
