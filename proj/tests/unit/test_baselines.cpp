#include <doctest.h>

#include <cmath>

#include "liitr/baselines.hpp"
#include "models.hpp"

using namespace liitr;

namespace {

// y = 0.5 x1 - x2 + 0.25 x3 + 2 x4 + t (1 - 0.5 x1 + 0.3 x2) + noise_sd * N(0, 1)
Dataset global_rule_data(std::size_t n, double noise_sd, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x = Matrix(n, 4);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 4; ++c) d.x(i, c) = rng.normal();
    const int t = rng.bernoulli(0.5) ? 1 : 0;
    d.t.push_back(t);
    d.y[i] = 0.5 * d.x(i, 0) - d.x(i, 1) + 0.25 * d.x(i, 2) + 2.0 * d.x(i, 3) +
             t * (1.0 - 0.5 * d.x(i, 0) + 0.3 * d.x(i, 1)) + noise_sd * rng.normal();
  }
  return d;
}

const FeatureSpec kH0{{0, 1, 2, 3}, false};
const FeatureSpec kH1{{0, 1}, true};

}  // namespace

TEST_CASE("LIME kernel") {
  CHECK(lime_kernel(0.0, 1.5) == 1.0);
  CHECK(lime_kernel(2.25, 1.5) == doctest::Approx(std::exp(-1.0)));
  CHECK(lime_kernel(4.0, 1.5) < lime_kernel(1.0, 1.5));
  LimeConfig c;
  c.kernel_width = 0.0;
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c.kernel_width = 1.0;
  c.perturb_sd = {1.0, -1.0, 1.0, 1.0};
  CHECK_THROWS_AS(c.validate(4), ConfigError);
}

TEST_CASE("LIME recovers a globally linear black box") {
  // No intercept: H0 carries none, so the linear map must pass through 0.
  const BlackboxModel bb = linear_blackbox(Vector{1.5, 0.7, -1.2, 0.4, 2.0}, 0.0);
  LimeConfig cfg;
  cfg.m = 4000;
  Rng rng(1);
  const Explanation e = lime_explain(Vector{0.3, -1.0, 2.0, 0.5}, bb, cfg, rng, 7);
  CHECK(e.method == "lime");
  CHECK(e.subject_id == 7);
  const Vector k1{0.7, -1.2, 0.4, 2.0}, k2{1.5, 0.0, 0.0};
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(e.beta_k1[c] - k1[c]) < 0.02);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(e.beta_k2[c] - k2[c]) < 0.02);
  CHECK(e.recommended_t == 1);
  CHECK(*e.local_r2 > 0.999);
}

TEST_CASE("LIME with flat weights is ordinary least squares") {
  const BlackboxModel bb = linear_blackbox(Vector{-0.5, 0.2, 0.1, 0.0, 0.3}, 1.0);
  LimeConfig cfg;
  cfg.m = 500;
  cfg.kernel_width = 1e9;
  Rng rng(2);
  const LimeFit fit = lime_fit(Vector{0.0, 0.0, 0.0, 0.0}, bb, cfg, rng);
  for (double w : fit.weights) CHECK(w == doctest::Approx(1.0));

  Eigen::MatrixXd X(cfg.m, 7);
  Eigen::VectorXd y(cfg.m);
  for (std::size_t j = 0; j < cfg.m; ++j) {
    const double t = fit.d_prime(j, 0);
    for (std::size_t c = 0; c < 4; ++c) X(j, c) = fit.d_prime(j, c + 1);
    X(j, 4) = t;
    X(j, 5) = t * fit.d_prime(j, 1);
    X(j, 6) = t * fit.d_prime(j, 2);
    y(j) = fit.y_hat[j];
  }
  const Eigen::VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  for (std::size_t c = 0; c < 4; ++c) CHECK(fit.beta_k1[c] == doctest::Approx(ols(c)).epsilon(1e-8));
  for (std::size_t c = 0; c < 3; ++c) CHECK(fit.beta_k2[c] == doctest::Approx(ols(4 + c)).epsilon(1e-8));
}

TEST_CASE("LIME is deterministic for a seed") {
  const BlackboxModel bb = linear_blackbox(Vector{1.0, 1.0, 1.0, 1.0, 1.0}, 0.0);
  LimeConfig cfg;
  cfg.m = 200;
  Rng a(3), b(3);
  const Vector x{1.0, 2.0, 3.0, 4.0};
  CHECK(lime_fit(x, bb, cfg, a).d_prime == lime_fit(x, bb, cfg, b).d_prime);
}

TEST_CASE("Q-learning recovers a noiseless global rule exactly") {
  const Dataset d = global_rule_data(300, 0.0, 4);
  const QLearningModel q = q_learning_fit(d, kH0, kH1);
  CHECK(std::abs(q.intercept) < 1e-8);
  const Vector h0{0.5, -1.0, 0.25, 2.0}, h1{1.0, -0.5, 0.3};
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(q.beta_h0[c] - h0[c]) < 1e-8);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(q.beta_h1[c] - h1[c]) < 1e-8);
  CHECK(q.residual_sd < 1e-8);
  CHECK(q.rule(Vector{0.0, 0.0, 0.0, 0.0}) == 1);
  CHECK(q.rule(Vector{4.0, 0.0, 0.0, 0.0}) == 0);
  CHECK(q.rule(Vector{2.0, 0.0, 0.0, 0.0}) == 0);  // contrast exactly 0 ties to control

  const Explanation e = qlearn_explain(q, Vector{4.0, 0.0, 0.0, 0.0}, 3);
  CHECK(e.method == "qlearn");
  CHECK(e.recommended_t == 0);
  CHECK(e.beta_k2 == q.beta_h1);
}

TEST_CASE("Q-learning on pure noise stays within three standard errors") {
  Rng rng(5);
  Dataset d = global_rule_data(20000, 0.0, 5);
  for (double& y : d.y) y = rng.normal();
  const QLearningModel q = q_learning_fit(d, kH0, kH1);
  CHECK(std::abs(q.intercept) < 3.0 * q.standard_errors[0]);
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(q.beta_h0[c]) < 3.0 * q.standard_errors[1 + c]);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(q.beta_h1[c]) < 3.0 * q.standard_errors[5 + c]);
  // OLS standard error of the intercept is about sigma / sqrt(n) scaled by design.
  CHECK(q.standard_errors[0] == doctest::Approx(1.0 / std::sqrt(20000.0)).epsilon(0.5));
}

TEST_CASE("duplicating rows leaves Q-learning coefficients unchanged") {
  const Dataset d = global_rule_data(400, 0.5, 6);
  std::vector<std::size_t> twice;
  for (std::size_t i = 0; i < d.n(); ++i) twice.insert(twice.end(), {i, i});
  const QLearningModel a = q_learning_fit(d, kH0, kH1);
  const QLearningModel b = q_learning_fit(d.select(twice), kH0, kH1);
  CHECK(b.intercept == doctest::Approx(a.intercept).epsilon(1e-9));
  for (std::size_t c = 0; c < 4; ++c) CHECK(b.beta_h0[c] == doctest::Approx(a.beta_h0[c]).epsilon(1e-9));
  for (std::size_t c = 0; c < 3; ++c) CHECK(b.beta_h1[c] == doctest::Approx(a.beta_h1[c]).epsilon(1e-9));
}

TEST_CASE("Q-learning needs more rows than columns and flags rank deficiency") {
  CHECK_THROWS_AS(q_learning_fit(global_rule_data(8, 0.1, 7), kH0, kH1), UsageError);
  Dataset d = global_rule_data(200, 0.1, 8);
  for (std::size_t i = 0; i < d.n(); ++i) d.x(i, 3) = d.x(i, 2);
  CHECK(q_learning_fit(d, kH0, kH1).ridge_used);
}
