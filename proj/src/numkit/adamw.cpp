#include "liitr/numkit/adamw.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace liitr {

double cosine_rate(double base, double floor_frac, std::size_t epoch, std::size_t total) {
  const double progress = static_cast<double>(epoch) / static_cast<double>(std::max<std::size_t>(total, 1));
  return base * (floor_frac + (1.0 - floor_frac) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void AdamWConfig::validate() const {
  if (!(learning_rate > 0.0) || !(beta1 > 0.0) || !(beta2 > 0.0) || !(epsilon > 0.0))
    throw ConfigError("AdamW hyperparameters must be strictly positive");
  if (!(beta1 < 1.0) || !(beta2 < 1.0)) throw ConfigError("AdamW betas must be < 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("AdamW weight_decay must be >= 0");
}

void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, AdamWState& state) {
  require_shape(params.size() == grads.size(), "adamw_step: block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    require_shape(params[b].size() == grads[b].size(),
                  "adamw_step: block " + std::to_string(b) + " size mismatch");
    for (double g : grads[b])
      if (!std::isfinite(g))
        throw TrainingError("non-finite gradient in parameter block " + std::to_string(b) +
                            " (layer " + std::to_string(b / 2) + ")");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  require_shape(state.first_moment.size() == params.size(),
                "adamw_step: optimizer state tracks a different parameter list");

  const AdamWConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    auto g = grads[b];
    Vector& m = state.first_moment[b];
    Vector& v = state.second_moment[b];
    require_shape(m.size() == p.size(), "adamw_step: moment shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.learning_rate * (mhat / (std::sqrt(vhat) + c.epsilon) + c.weight_decay * p[i]);
    }
  }
}

void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<double>> grads, AdamWState& state) {
  std::vector<std::span<const double>> cg(grads.begin(), grads.end());
  adamw_step(params, cg, state);
}

}  // namespace liitr
