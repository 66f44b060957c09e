#include "liitr/numkit/scaler.hpp"

#include <algorithm>
#include <cmath>

namespace liitr {

Scaler Scaler::fit(const Matrix& x) {
  require_shape(x.rows() > 0, "Scaler::fit on empty matrix");
  const std::size_t n = x.rows(), p = x.cols();
  Scaler s{Vector(p, 0.0), Vector(p, 0.0), std::vector<bool>(p, false)};
  for (std::size_t c = 0; c < p; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += x(r, c);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) ss += (x(r, c) - mean) * (x(r, c) - mean);
    double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      sd = 1.0;
      s.clamped[c] = true;
    }
    s.mean[c] = mean;
    s.sd[c] = sd;
  }
  return s;
}

Scaler Scaler::identity(std::size_t cols) {
  return Scaler{Vector(cols, 0.0), Vector(cols, 1.0), std::vector<bool>(cols, false)};
}

bool Scaler::any_clamped() const {
  return std::any_of(clamped.begin(), clamped.end(), [](bool b) { return b; });
}

Matrix Scaler::transform(const Matrix& x) const {
  require_shape(x.cols() == dim(), "Scaler::transform width mismatch");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / sd[c];
  return out;
}

Matrix Scaler::inverse(const Matrix& z) const {
  require_shape(z.cols() == dim(), "Scaler::inverse width mismatch");
  Matrix out(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t c = 0; c < z.cols(); ++c) out(r, c) = z(r, c) * sd[c] + mean[c];
  return out;
}

Vector Scaler::transform_row(std::span<const double> x) const {
  require_shape(x.size() == dim(), "Scaler::transform_row width mismatch");
  Vector out(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) out[c] = (x[c] - mean[c]) / sd[c];
  return out;
}

Vector Scaler::inverse_row(std::span<const double> z) const {
  require_shape(z.size() == dim(), "Scaler::inverse_row width mismatch");
  Vector out(z.size());
  for (std::size_t c = 0; c < z.size(); ++c) out[c] = z[c] * sd[c] + mean[c];
  return out;
}

}  // namespace liitr
