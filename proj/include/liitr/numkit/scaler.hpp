#pragma once

#include <span>
#include <vector>

#include "liitr/numkit/matrix.hpp"

namespace liitr {

// Per-column standardization with the population sd (divide by n).
// Columns whose sd is numerically zero get sd = 1 and are flagged.
struct Scaler {
  Vector mean;
  Vector sd;
  std::vector<bool> clamped;

  static Scaler fit(const Matrix& x);
  static Scaler identity(std::size_t cols);

  std::size_t dim() const { return mean.size(); }
  bool any_clamped() const;

  Matrix transform(const Matrix& x) const;
  Matrix inverse(const Matrix& z) const;
  Vector transform_row(std::span<const double> x) const;
  Vector inverse_row(std::span<const double> z) const;

  friend bool operator==(const Scaler&, const Scaler&) = default;
};

}  // namespace liitr
