#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "liitr/numkit/matrix.hpp"

namespace liitr {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  void validate() const;
};

// Optimizer state over a fixed list of parameter blocks. Moments are lazily
// shaped on the first step and must match the blocks from then on.
struct AdamWState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;

  explicit AdamWState(AdamWConfig cfg = {}) : config(cfg) { config.validate(); }
};

// Decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
// Throws TrainingError naming the block index if any gradient is non-finite;
// in that case nothing is modified.
void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, AdamWState& state);

// Cosine decay from base at epoch 0 towards base * floor_frac at `total`.
double cosine_rate(double base, double floor_frac, std::size_t epoch, std::size_t total);

// Convenience overload for mutable gradient spans.
void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<double>> grads, AdamWState& state);

}  // namespace liitr
