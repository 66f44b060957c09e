#include "liitr/baselines.hpp"

#include <cmath>

#include "liitr/numkit/linalg.hpp"

namespace liitr {

void LimeConfig::validate(std::size_t p) const {
  if (m < 10) throw ConfigError("LIME m must be >= 10");
  if (!(kernel_width > 0.0)) throw ConfigError("LIME kernel_width must be > 0");
  if (!perturb_sd.empty() && perturb_sd.size() != p)
    throw ConfigError("LIME perturb_sd length must equal p");
  for (double s : perturb_sd)
    if (!(s > 0.0)) throw ConfigError("LIME perturb_sd entries must be > 0");
}

double LimeConfig::sd_for(std::size_t feature) const {
  return perturb_sd.empty() ? 1.0 : perturb_sd[feature];
}

double lime_kernel(double dist_sq, double kernel_width) {
  return std::exp(-dist_sq / (kernel_width * kernel_width));
}

LimeFit lime_fit(std::span<const double> x_subject, const BlackboxModel& bb, const LimeConfig& cfg,
                 Rng& rng) {
  const std::size_t p = bb.p();
  require_shape(x_subject.size() == p, "lime_fit: subject has wrong width");
  cfg.validate(p);
  const Scaler& sc = bb.input_scaler;

  LimeFit fit;
  fit.d_prime = Matrix(cfg.m, p + 1);
  fit.weights.resize(cfg.m);
  for (std::size_t j = 0; j < cfg.m; ++j) {
    double dist_sq = 0.0;
    for (std::size_t c = 0; c < p; ++c) {
      // Independent per feature: correlations between covariates are ignored.
      const double step = cfg.sd_for(c) * rng.normal();
      fit.d_prime(j, c + 1) = x_subject[c] + step * sc.sd[c];
      dist_sq += step * step;
    }
    fit.d_prime(j, 0) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    fit.weights[j] = lime_kernel(dist_sq, cfg.kernel_width);
  }
  fit.y_hat = predict_batch(bb, fit.d_prime);

  const std::size_t a = cfg.h0.size(), b = cfg.h1.size();
  Matrix design(cfg.m, a + b);
  Vector x(p), h0(a), h1(b);
  for (std::size_t j = 0; j < cfg.m; ++j) {
    for (std::size_t c = 0; c < p; ++c) x[c] = fit.d_prime(j, c + 1);
    cfg.h0.fill(x, h0);
    cfg.h1.fill(x, h1);
    const double t = fit.d_prime(j, 0);
    for (std::size_t c = 0; c < a; ++c) design(j, c) = h0[c];
    for (std::size_t c = 0; c < b; ++c) design(j, a + c) = t * h1[c];
  }
  const LeastSquaresFit ls = least_squares(design, fit.y_hat, fit.weights);
  fit.ridge_used = ls.ridge_used;
  fit.beta_k1.assign(ls.coef.begin(), ls.coef.begin() + static_cast<std::ptrdiff_t>(a));
  fit.beta_k2.assign(ls.coef.begin() + static_cast<std::ptrdiff_t>(a), ls.coef.end());

  double wsum = 0.0, wmean = 0.0;
  for (std::size_t j = 0; j < cfg.m; ++j) {
    wsum += fit.weights[j];
    wmean += fit.weights[j] * fit.y_hat[j];
  }
  wmean /= wsum;
  double tss = 0.0;
  for (std::size_t j = 0; j < cfg.m; ++j)
    tss += fit.weights[j] * (fit.y_hat[j] - wmean) * (fit.y_hat[j] - wmean);
  fit.weighted_r2 = tss > 0.0 ? 1.0 - ls.rss / tss : 0.0;
  return fit;
}

Explanation lime_explain(std::span<const double> x_subject, const BlackboxModel& bb,
                         const LimeConfig& cfg, Rng& rng, std::size_t subject_id) {
  const LimeFit fit = lime_fit(x_subject, bb, cfg, rng);
  Explanation e;
  e.method = "lime";
  e.subject_id = subject_id;
  e.beta_k1 = fit.beta_k1;
  e.beta_k2 = fit.beta_k2;
  e.recommended_t = recommend_treatment(fit.beta_k2, cfg.h1.build(x_subject));
  e.local_r2 = fit.weighted_r2;
  e.gated_rows = cfg.m;
  e.gate_distribution = {1.0};
  return e;
}

int QLearningModel::rule(std::span<const double> x_row) const {
  return recommend_treatment(beta_h1, h1.build(x_row));
}

QLearningModel q_learning_fit(const Dataset& data, const FeatureSpec& h0, const FeatureSpec& h1) {
  data.validate();
  const std::size_t n = data.n(), a = h0.size(), b = h1.size(), cols = 1 + a + b;
  if (n <= cols)
    throw UsageError("q_learning_fit needs n > " + std::to_string(cols) + " rows");
  Matrix design(n, cols);
  Vector hv0(a), hv1(b);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = data.x.row(i);
    h0.fill(x, hv0);
    h1.fill(x, hv1);
    design(i, 0) = 1.0;
    for (std::size_t c = 0; c < a; ++c) design(i, 1 + c) = hv0[c];
    for (std::size_t c = 0; c < b; ++c) design(i, 1 + a + c) = data.t[i] * hv1[c];
  }
  const LeastSquaresFit ls = least_squares(design, data.y);
  QLearningModel q;
  q.h0 = h0;
  q.h1 = h1;
  q.ridge_used = ls.ridge_used;
  q.intercept = ls.coef[0];
  q.beta_h0.assign(ls.coef.begin() + 1, ls.coef.begin() + 1 + static_cast<std::ptrdiff_t>(a));
  q.beta_h1.assign(ls.coef.begin() + 1 + static_cast<std::ptrdiff_t>(a), ls.coef.end());
  const double s2 = ls.rss / static_cast<double>(n - cols);
  q.residual_sd = std::sqrt(s2);
  const Vector diag = gram_inverse_diagonal(design, ls.ridge_used ? 1e-6 : 0.0);
  for (double d : diag) q.standard_errors.push_back(std::sqrt(s2 * d));
  return q;
}

Explanation qlearn_explain(const QLearningModel& model, std::span<const double> x_subject,
                           std::size_t subject_id) {
  Explanation e;
  e.method = "qlearn";
  e.subject_id = subject_id;
  e.beta_k1 = model.beta_h0;
  e.beta_k2 = model.beta_h1;
  e.recommended_t = model.rule(x_subject);
  e.gate_distribution = {1.0};
  return e;
}

json qlearning_to_json(const QLearningModel& model) {
  return json{{"kind", "qlearn"},
              {"h0_columns", model.h0.columns},
              {"h0_intercept", model.h0.intercept},
              {"h1_columns", model.h1.columns},
              {"h1_intercept", model.h1.intercept},
              {"intercept", model.intercept},
              {"beta_h0", model.beta_h0},
              {"beta_h1", model.beta_h1},
              {"standard_errors", model.standard_errors},
              {"residual_sd", model.residual_sd},
              {"ridge_used", model.ridge_used}};
}

}  // namespace liitr
