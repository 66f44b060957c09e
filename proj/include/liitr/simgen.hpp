#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "liitr/numkit/matrix.hpp"

namespace liitr {

// Observational data (X, T, Y). The black-box input is D = (T, X).
struct Dataset {
  Matrix x;
  std::vector<int> t;
  Vector y;
  std::vector<std::string> columns;  // names of the x columns

  std::size_t n() const { return x.rows(); }
  std::size_t p() const { return x.cols(); }
  void validate() const;
  Dataset slice(std::size_t begin, std::size_t end) const;
  Dataset select(std::span<const std::size_t> rows) const;
};

struct SimConfig {
  std::size_t n = 2000;
  std::uint64_t seed = 1;
  double noise_sd = 1.0;
  bool misspecified = false;
  double quad_coef = 0.35;
  std::array<double, 4> beta1{2.25, 1.65, 1.55, 1.25};
  std::array<std::array<double, 3>, 4> beta_k2{{{1.20, 0.80, -0.60},
                                                 {-1.10, 0.50, 0.90},
                                                 {0.40, -1.30, 0.70},
                                                 {-0.50, -0.70, -0.90}}};

  void validate() const;
};

// Regions are numbered 0..3 in code (1..4 in reports); see region_of.
struct GroundTruth {
  std::array<double, 4> beta1{};
  std::array<std::array<double, 3>, 4> beta_k2{};
  std::vector<int> region;
  std::vector<int> optimal_t;
  double x1_med = 0.0;
  double x2_med = 0.0;
  bool misspecified = false;
  double quad_coef = 0.0;
};

// 0: x1 and x2 above their medians, 1: both at or below, 2: only x1 above,
// 3: only x2 above. beta_k2[r] is the contrast of region r.
int region_of(std::span<const double> x_row, double x1_med, double x2_med);

// beta_k2' (1, x1, x2), plus quad_coef * x1^2 for the misspecified design.
double treatment_contrast(std::span<const double> x_row, const GroundTruth& truth);

// 1 iff the true treatment contrast at x_row is > 0; ties go to 0.
int oracle_optimal_treatment(std::span<const double> x_row, const GroundTruth& truth);

double expit(double v);
double treatment_probability(double x3, double x4);

struct SimResult {
  Dataset data;
  GroundTruth truth;
};

SimResult generate(const SimConfig& config);

}  // namespace liitr
