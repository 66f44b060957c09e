#include "liitr/simgen.hpp"

#include <cmath>

#include "liitr/numkit/linalg.hpp"
#include "liitr/numkit/rng.hpp"

namespace liitr {

void Dataset::validate() const {
  require_shape(t.size() == x.rows() && y.size() == x.rows(), "dataset columns differ in length");
  require_shape(columns.empty() || columns.size() == x.cols(), "dataset column names mismatch");
  for (int v : t)
    if (v != 0 && v != 1) throw ShapeError("treatment must be 0 or 1");
  if (!x.all_finite()) throw ShapeError("dataset has non-finite covariates");
  for (double v : y)
    if (!std::isfinite(v)) throw ShapeError("dataset has non-finite outcomes");
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  Dataset d{x.slice_rows(begin, end), {t.begin() + static_cast<std::ptrdiff_t>(begin),
                                       t.begin() + static_cast<std::ptrdiff_t>(end)},
            {y.begin() + static_cast<std::ptrdiff_t>(begin),
             y.begin() + static_cast<std::ptrdiff_t>(end)},
            columns};
  return d;
}

Dataset Dataset::select(std::span<const std::size_t> rows) const {
  Dataset d{x.select_rows(rows), {}, {}, columns};
  for (std::size_t r : rows) {
    d.t.push_back(t[r]);
    d.y.push_back(y[r]);
  }
  return d;
}

void SimConfig::validate() const {
  if (n < 8) throw ConfigError("simulation needs n >= 8");
  if (!(noise_sd > 0.0)) throw ConfigError("noise_sd must be > 0");
  if (!std::isfinite(quad_coef)) throw ConfigError("quad_coef must be finite");
}

int region_of(std::span<const double> x_row, double x1_med, double x2_med) {
  require_shape(x_row.size() >= 2, "region_of needs x1 and x2");
  const bool hi1 = x_row[0] > x1_med, hi2 = x_row[1] > x2_med;
  if (hi1 && hi2) return 0;
  if (!hi1 && !hi2) return 1;
  return hi1 ? 2 : 3;
}

double treatment_contrast(std::span<const double> x_row, const GroundTruth& truth) {
  const auto& b = truth.beta_k2[static_cast<std::size_t>(region_of(x_row, truth.x1_med,
                                                                   truth.x2_med))];
  double c = b[0] + b[1] * x_row[0] + b[2] * x_row[1];
  if (truth.misspecified) c += truth.quad_coef * x_row[0] * x_row[0];
  return c;
}

int oracle_optimal_treatment(std::span<const double> x_row, const GroundTruth& truth) {
  return treatment_contrast(x_row, truth) > 0.0 ? 1 : 0;
}

double expit(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double treatment_probability(double x3, double x4) { return expit(-0.65 * x3 + 0.15 * x4); }

SimResult generate(const SimConfig& config) {
  config.validate();
  Rng rng = Rng(config.seed).child("sim");
  const std::size_t n = config.n;
  SimResult out;
  Dataset& d = out.data;
  d.x = Matrix(n, 4);
  d.t.resize(n);
  d.y.resize(n);
  d.columns = {"x1", "x2", "x3", "x4"};

  // Draw order per row is fixed: Z, X1..X4, T, eps.
  Vector eps(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng.uniform(0.0, 20.0);
    const double s = std::sin(z), c = std::cos(z);
    d.x(i, 0) = std::exp(rng.normal(1.50 * s, 0.05));
    d.x(i, 1) = rng.normal(1.25 * c, 0.55);
    d.x(i, 2) = rng.normal(1.65 * s, 0.65);
    d.x(i, 3) = std::exp(rng.normal(1.25 * c, 0.05));
    d.t[i] = rng.bernoulli(treatment_probability(d.x(i, 2), d.x(i, 3))) ? 1 : 0;
    eps[i] = rng.normal(0.0, config.noise_sd);
  }

  GroundTruth& g = out.truth;
  g.beta1 = config.beta1;
  g.beta_k2 = config.beta_k2;
  g.misspecified = config.misspecified;
  g.quad_coef = config.misspecified ? config.quad_coef : 0.0;
  g.x1_med = median(d.x.column(0));
  g.x2_med = median(d.x.column(1));
  g.region.resize(n);
  g.optimal_t.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = d.x.row(i);
    g.region[i] = region_of(row, g.x1_med, g.x2_med);
    double main = 0.0;
    for (std::size_t j = 0; j < 4; ++j) main += g.beta1[j] * row[j];
    const double contrast = treatment_contrast(row, g);
    g.optimal_t[i] = contrast > 0.0 ? 1 : 0;
    d.y[i] = main + contrast * d.t[i] + eps[i];
  }
  return out;
}

}  // namespace liitr
