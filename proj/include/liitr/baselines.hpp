#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "liitr/blackbox.hpp"
#include "liitr/moe.hpp"

namespace liitr {

struct LimeConfig {
  std::size_t m = 20000;
  double kernel_width = 1.5;  // 0.75 * sqrt(p) for p = 4; in standardized units
  Vector perturb_sd;          // per feature, standardized units; empty = 1.0 each
  FeatureSpec h0{{0, 1, 2, 3}, false};
  FeatureSpec h1{{0, 1}, true};

  void validate(std::size_t p) const;
  double sd_for(std::size_t feature) const;
};

// exp(-dist^2 / width^2)
double lime_kernel(double dist_sq, double kernel_width);

// Perturbed design and fit, kept for audit and fidelity checks.
struct LimeFit {
  Matrix d_prime;  // rows (t', x')
  Vector y_hat;
  Vector weights;
  Vector beta_k1;
  Vector beta_k2;
  double weighted_r2 = 0.0;
  bool ridge_used = false;
};

LimeFit lime_fit(std::span<const double> x_subject, const BlackboxModel& bb, const LimeConfig& cfg,
                 Rng& rng);

// Explanation with method "lime"; local_r2 is the kernel-weighted R^2 on LIME's own sample.
Explanation lime_explain(std::span<const double> x_subject, const BlackboxModel& bb,
                         const LimeConfig& cfg, Rng& rng, std::size_t subject_id = 0);

struct QLearningModel {
  FeatureSpec h0;
  FeatureSpec h1;
  double intercept = 0.0;
  Vector beta_h0;
  Vector beta_h1;
  Vector standard_errors;  // intercept, beta_h0..., beta_h1...
  double residual_sd = 0.0;
  bool ridge_used = false;

  int rule(std::span<const double> x_row) const;
};

// OLS of Y on (1, H0, T*H1).
QLearningModel q_learning_fit(const Dataset& data, const FeatureSpec& h0, const FeatureSpec& h1);

Explanation qlearn_explain(const QLearningModel& model, std::span<const double> x_subject,
                           std::size_t subject_id = 0);

json qlearning_to_json(const QLearningModel& model);

}  // namespace liitr
