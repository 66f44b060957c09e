#pragma once

#include <span>

#include "liitr/numkit/matrix.hpp"

namespace liitr {

struct LeastSquaresFit {
  Vector coef;
  std::size_t rank = 0;
  bool ridge_used = false;  // design was rank deficient; ridge fallback applied
  double rss = 0.0;         // weighted residual sum of squares
};

// Minimizes sum_i w_i (y_i - x_i' b)^2. Empty `weights` means unit weights.
// Rank-deficient designs fall back to (X'WX + ridge I) b = X'Wy.
LeastSquaresFit least_squares(const Matrix& design, std::span<const double> y,
                              std::span<const double> weights = {}, double ridge = 1e-6);

// Diagonal of (X'X)^-1, used for OLS standard errors.
Vector gram_inverse_diagonal(const Matrix& design, double ridge = 0.0);

double mean(std::span<const double> v);
double variance(std::span<const double> v);  // population
double median(std::vector<double> v);
double r_squared(std::span<const double> truth, std::span<const double> pred);
double pearson(std::span<const double> a, std::span<const double> b);
Matrix correlation_matrix(const Matrix& x);
double max_abs_off_diagonal(const Matrix& m);

}  // namespace liitr
