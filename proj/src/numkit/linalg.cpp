#include "liitr/numkit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace liitr {

LeastSquaresFit least_squares(const Matrix& design, std::span<const double> y,
                              std::span<const double> weights, double ridge) {
  const std::size_t n = design.rows(), p = design.cols();
  require_shape(y.size() == n, "least_squares: y length mismatch");
  require_shape(weights.empty() || weights.size() == n, "least_squares: weights length mismatch");
  RowMajor xw = design.eigen();
  Eigen::VectorXd yw(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double sw = weights.empty() ? 1.0 : std::sqrt(weights[i]);
    xw.row(static_cast<Eigen::Index>(i)) *= sw;
    yw(static_cast<Eigen::Index>(i)) = y[i] * sw;
  }
  LeastSquaresFit fit;
  Eigen::ColPivHouseholderQR<RowMajor> qr(xw);
  qr.setThreshold(1e-10);
  fit.rank = static_cast<std::size_t>(qr.rank());
  Eigen::VectorXd b;
  if (fit.rank == p && n >= p) {
    b = qr.solve(yw);
  } else {
    fit.ridge_used = true;
    Eigen::MatrixXd gram = xw.transpose() * xw;
    gram.diagonal().array() += ridge;
    b = gram.ldlt().solve(xw.transpose() * yw);
  }
  fit.coef.assign(b.data(), b.data() + b.size());
  fit.rss = (yw - xw * b).squaredNorm();
  return fit;
}

Vector gram_inverse_diagonal(const Matrix& design, double ridge) {
  Eigen::MatrixXd gram = design.eigen().transpose() * design.eigen();
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd inv = gram.ldlt().solve(
      Eigen::MatrixXd::Identity(gram.rows(), gram.cols()));
  Vector out(static_cast<std::size_t>(inv.rows()));
  for (Eigen::Index i = 0; i < inv.rows(); ++i) out[static_cast<std::size_t>(i)] = inv(i, i);
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  require_shape(!v.empty(), "median of empty vector");
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double r_squared(std::span<const double> truth, std::span<const double> pred) {
  require_shape(truth.size() == pred.size(), "r_squared length mismatch");
  const double m = mean(truth);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - m) * (truth[i] - m);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  require_shape(a.size() == b.size(), "pearson length mismatch");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

Matrix correlation_matrix(const Matrix& x) {
  const std::size_t p = x.cols();
  std::vector<Vector> cols(p);
  for (std::size_t c = 0; c < p; ++c) cols[c] = x.column(c);
  Matrix r = Matrix::identity(p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j) r(i, j) = r(j, i) = pearson(cols[i], cols[j]);
  return r;
}

double max_abs_off_diagonal(const Matrix& m) {
  double best = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j) best = std::max(best, std::abs(m(i, j)));
  return best;
}

}  // namespace liitr
