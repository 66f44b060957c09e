#include "liitr/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "liitr/kernels/mlp_kernels.hpp"
#include "liitr/kernels/moe_kernels.hpp"
#include "liitr/numkit/linalg.hpp"

namespace liitr {

void FeatureSpec::fill(std::span<const double> x_row, std::span<double> out) const {
  require_shape(out.size() == size(), "FeatureSpec::fill: output length mismatch");
  std::size_t i = 0;
  if (intercept) out[i++] = 1.0;
  for (std::size_t c : columns) {
    require_shape(c < x_row.size(), "FeatureSpec column " + std::to_string(c) + " out of range");
    out[i++] = x_row[c];
  }
}

Vector FeatureSpec::build(std::span<const double> x_row) const {
  Vector out(size());
  fill(x_row, out);
  return out;
}

std::vector<std::string> FeatureSpec::names(const std::vector<std::string>& x_names) const {
  std::vector<std::string> out;
  if (intercept) out.emplace_back("intercept");
  for (std::size_t c : columns)
    out.push_back(c < x_names.size() ? x_names[c] : "x" + std::to_string(c + 1));
  return out;
}

double ExpertModel::sigma() const { return std::exp(log_sigma); }

double ExpertModel::mean(std::span<const double> h0, std::span<const double> h1, double t) const {
  require_shape(h0.size() == beta_k1.size() && h1.size() == beta_k2.size(),
                "ExpertModel::mean: feature length mismatch");
  double m0 = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < h0.size(); ++i) m0 += beta_k1[i] * h0[i];
  for (std::size_t i = 0; i < h1.size(); ++i) m1 += beta_k2[i] * h1[i];
  return m0 + m1 * t;
}

Vector GatingModel::logits(std::span<const double> x_row) const {
  return forward(net, scaler.transform_row(x_row));
}

void MoEConfig::validate() const {
  if (K < 1 || K > 16) throw ConfigError("MoE K must lie in [1, 16]");
  if (!(lambda >= 0.0)) throw ConfigError("MoE lambda must be >= 0");
  if (h1.size() == 0) throw ConfigError("MoE h1 spec must be non-empty");
  if (batch_size == 0 || max_epochs == 0) throw ConfigError("MoE batch/epochs must be > 0");
  if (warmup_epochs > max_epochs) throw ConfigError("MoE warmup_epochs exceeds max_epochs");
  if (!(lr_experts > 0.0) || !(lr_gate > 0.0)) throw ConfigError("MoE learning rates must be > 0");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0))
    throw ConfigError("MoE lr_final_fraction must lie in (0, 1]");
  if (!(min_sigma > 0.0)) throw ConfigError("MoE min_sigma must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("MoE weight_decay must be >= 0");
}

MoEData make_moe_data(const PerturbationSet& pset, const FeatureSpec& h0, const FeatureSpec& h1,
                      const Scaler& gate_scaler) {
  if (!pset.has_predictions()) throw UsageError("perturbation set has no predictions attached");
  require_shape(gate_scaler.dim() == pset.p(), "gate scaler width mismatch");
  const std::size_t m = pset.m();
  MoEData d;
  d.h0.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(h0.size()));
  d.h1.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(h1.size()));
  d.t.resize(static_cast<Eigen::Index>(m));
  d.y.resize(static_cast<Eigen::Index>(m));
  d.gate_x.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(pset.p()));
  Vector x(pset.p());
  for (std::size_t j = 0; j < m; ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    for (std::size_t c = 0; c < pset.p(); ++c) x[c] = pset.d_prime(j, c + 1);
    h0.fill(x, std::span<double>(d.h0.row(r).data(), h0.size()));
    h1.fill(x, std::span<double>(d.h1.row(r).data(), h1.size()));
    d.t(r) = pset.t_prime(j);
    d.y(r) = pset.y_hat[j];
    for (std::size_t c = 0; c < pset.p(); ++c)
      d.gate_x(r, static_cast<Eigen::Index>(c)) = (x[c] - gate_scaler.mean[c]) / gate_scaler.sd[c];
  }
  return d;
}

MoEGradient MoEGradient::zeros_like(const std::vector<ExpertModel>& experts,
                                    const GatingModel& gate) {
  MoEGradient g;
  for (const auto& e : experts) {
    g.beta_k1.emplace_back(e.beta_k1.size(), 0.0);
    g.beta_k2.emplace_back(e.beta_k2.size(), 0.0);
  }
  g.log_sigma.assign(experts.size(), 0.0);
  g.gate = MlpGradients::zeros_like(gate.net);
  return g;
}

void MoEGradient::set_zero() {
  for (auto& v : beta_k1) std::fill(v.begin(), v.end(), 0.0);
  for (auto& v : beta_k2) std::fill(v.begin(), v.end(), 0.0);
  std::fill(log_sigma.begin(), log_sigma.end(), 0.0);
  gate.set_zero();
}

void MoEGradient::add(const MoEGradient& o) {
  for (std::size_t k = 0; k < beta_k1.size(); ++k) {
    for (std::size_t i = 0; i < beta_k1[k].size(); ++i) beta_k1[k][i] += o.beta_k1[k][i];
    for (std::size_t i = 0; i < beta_k2[k].size(); ++i) beta_k2[k][i] += o.beta_k2[k][i];
    log_sigma[k] += o.log_sigma[k];
  }
  gate.add(o.gate);
}

Vector softmax(std::span<const double> logits) {
  Vector out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

Vector log_softmax(std::span<const double> logits) {
  require_shape(!logits.empty(), "softmax of empty vector");
  const double hmax = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double h : logits) z += std::exp(h - hmax);
  const double lse = hmax + std::log(z);
  Vector out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

Vector responsibilities(const GatingModel& gate, std::span<const double> x_row) {
  return softmax(gate.logits(x_row));
}

std::size_t argmax(std::span<const double> v) {
  require_shape(!v.empty(), "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

Vector hard_gate(std::span<const double> pi) {
  Vector out(pi.size(), 0.0);
  out[argmax(pi)] = 1.0;
  return out;
}

double penalized_loglik(const PerturbationSet& pset, const std::vector<ExpertModel>& experts,
                        const GatingModel& gate, const MoEConfig& config, GateMode mode) {
  const MoEData data = make_moe_data(pset, config.h0, config.h1, gate.scaler);
  const kernels::MoEObjectiveArgs args{data, experts, gate, config.lambda, mode,
                                       config.ste_log_ratio_cap};
  const double v = kernels::parallel::moe_objective(args, {}, nullptr);
  if (!std::isfinite(v)) throw TrainingError("penalized log-likelihood is non-finite");
  return v;
}

std::vector<std::size_t> hard_assignments(const GatingModel& gate, const Matrix& x) {
  const RowMajor input = gate.scaler.transform(x).eigen();
  const RowMajor logits = kernels::parallel::mlp_forward_rows(gate.net, input);
  std::vector<std::size_t> out(x.rows());
  Vector row(gate.K);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t k = 0; k < gate.K; ++k) row[k] = logits(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
    out[r] = argmax(softmax(row));
  }
  return out;
}

namespace {

struct Fidelity {
  double r2 = 0.0;
  double mean_abs = 0.0;
  std::size_t rows = 0;
};

// Surrogate mean of `expert` vs y_hat over the selected rows.
Fidelity expert_fidelity(const ExpertModel& expert, const PerturbationSet& pset,
                         const FeatureSpec& h0, const FeatureSpec& h1,
                         const std::vector<std::size_t>& rows) {
  Fidelity f;
  f.rows = rows.size();
  if (rows.empty()) return f;
  Vector truth, pred;
  Vector x(pset.p());
  for (std::size_t j : rows) {
    for (std::size_t c = 0; c < pset.p(); ++c) x[c] = pset.d_prime(j, c + 1);
    pred.push_back(expert.mean(h0.build(x), h1.build(x), pset.t_prime(j)));
    truth.push_back(pset.y_hat[j]);
  }
  f.r2 = r_squared(truth, pred);
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - pred[i]);
  f.mean_abs = s / static_cast<double>(truth.size());
  return f;
}

}  // namespace

SurrogateFit fit_surrogate(const PerturbationSet& pset, const MoEConfig& config, Rng& rng) {
  config.validate();
  if (!pset.has_predictions()) throw UsageError("fit_surrogate: predictions not attached");
  if (pset.m() < 50 * config.K)
    throw ConfigError("fit_surrogate needs m >= 50*K (m=" + std::to_string(pset.m()) + ")");

  const std::size_t m = pset.m(), K = config.K;
  SurrogateFit fit;
  fit.gate.K = K;
  fit.gate.scaler = Scaler::fit(pset.x_prime());
  const MoEData data = make_moe_data(pset, config.h0, config.h1, fit.gate.scaler);
  const std::size_t a = config.h0.size(), b = config.h1.size();

  // Global least squares on [H0, t*H1] seeds every expert.
  Matrix design(m, a + b);
  for (std::size_t j = 0; j < m; ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    for (std::size_t c = 0; c < a; ++c) design(j, c) = data.h0(r, static_cast<Eigen::Index>(c));
    for (std::size_t c = 0; c < b; ++c) design(j, a + c) = data.t(r) * data.h1(r, static_cast<Eigen::Index>(c));
  }
  const LeastSquaresFit global = least_squares(design, std::span<const double>(data.y.data(), m));
  for (std::size_t k = 0; k < K; ++k) {
    ExpertModel e;
    for (std::size_t c = 0; c < a + b; ++c) {
      const double v = global.coef[c] + config.init_jitter * (1.0 + std::abs(global.coef[c])) * rng.normal();
      (c < a ? e.beta_k1 : e.beta_k2).push_back(v);
    }
    e.log_sigma = 0.0;
    fit.experts.push_back(std::move(e));
  }
  std::vector<std::size_t> sizes{pset.p()};
  sizes.insert(sizes.end(), config.gate_hidden.begin(), config.gate_hidden.end());
  sizes.push_back(K);
  fit.gate.net = MlpModel::create(sizes, Activation::relu, Activation::identity, rng);

  AdamWState coef_opt(AdamWConfig{config.lr_experts, 0.9, 0.999, 1e-8, config.weight_decay});
  AdamWState sigma_opt(AdamWConfig{config.lr_experts, 0.9, 0.999, 1e-8, 0.0});
  AdamWState gate_opt(AdamWConfig{config.lr_gate, 0.9, 0.999, 1e-8, 0.0});
  std::vector<std::span<double>> coef_blocks, sigma_blocks;
  for (auto& e : fit.experts) {
    coef_blocks.push_back(e.beta_k1);
    coef_blocks.push_back(e.beta_k2);
    sigma_blocks.emplace_back(&e.log_sigma, 1);
  }
  const auto gate_blocks = fit.gate.net.parameter_blocks();
  MoEGradient grad = MoEGradient::zeros_like(fit.experts, fit.gate);
  const double log_min_sigma = std::log(config.min_sigma);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<ExpertModel> best_experts;
  MlpModel best_gate;
  auto& diag = fit.diagnostics;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const GateMode mode = epoch < config.warmup_epochs ? GateMode::soft : GateMode::hard;
    coef_opt.config.learning_rate = sigma_opt.config.learning_rate =
        cosine_rate(config.lr_experts, config.lr_final_fraction, epoch, config.max_epochs);
    gate_opt.config.learning_rate =
        cosine_rate(config.lr_gate, config.lr_final_fraction, epoch, config.max_epochs);
    const kernels::MoEObjectiveArgs args{data, fit.experts, fit.gate, config.lambda, mode,
                                         config.ste_log_ratio_cap};
    rng.shuffle(order);
    double epoch_obj = 0.0;
    for (std::size_t start = 0; start < m; start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, m - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      grad.set_zero();
      const double obj = kernels::parallel::moe_objective(args, batch, &grad);
      if (!std::isfinite(obj))
        throw TrainingError("MoE objective is non-finite at epoch " + std::to_string(epoch));
      epoch_obj += obj;
      // Minimize -L / batch.
      const double s = -1.0 / static_cast<double>(len);
      std::vector<std::span<double>> coef_grads, sigma_grads;
      for (std::size_t k = 0; k < K; ++k) {
        for (double& v : grad.beta_k1[k]) v *= s;
        for (double& v : grad.beta_k2[k]) v *= s;
        grad.log_sigma[k] *= s;
        coef_grads.push_back(grad.beta_k1[k]);
        coef_grads.push_back(grad.beta_k2[k]);
        sigma_grads.emplace_back(&grad.log_sigma[k], 1);
      }
      grad.gate.scale(s);
      adamw_step(coef_blocks, coef_grads, coef_opt);
      adamw_step(sigma_blocks, sigma_grads, sigma_opt);
      adamw_step(gate_blocks, grad.gate.blocks(), gate_opt);
      for (auto& e : fit.experts) e.log_sigma = std::max(e.log_sigma, log_min_sigma);
    }
    const double epoch_loss = -epoch_obj / static_cast<double>(m);
    diag.epoch_loss.push_back(epoch_loss);
    diag.epochs_run = epoch + 1;

    if (epoch + 1 == config.warmup_epochs && config.warmup_epochs > 0) {
      const auto assign = hard_assignments(fit.gate, pset.x_prime());
      std::vector<std::size_t> counts(K, 0);
      for (std::size_t k : assign) ++counts[k];
      for (std::size_t k = 0; k < K; ++k)
        if (counts[k] == 0)
          diag.warnings.push_back("expert " + std::to_string(k) + " unused after warmup");
    }
    if (mode == GateMode::hard) {
      if (!std::isfinite(best) || epoch_loss < best - config.rel_tol * std::max(1.0, std::abs(best))) {
        best = epoch_loss;
        since_best = 0;
        best_experts = fit.experts;
        best_gate = fit.gate.net;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
  }

  // The hard phase is noisy under minibatching; keep its best epoch.
  if (!best_experts.empty()) {
    fit.experts = std::move(best_experts);
    fit.gate.net = std::move(best_gate);
  }

  // Diagnostics on the full perturbation set.
  const kernels::MoEObjectiveArgs final_args{data, fit.experts, fit.gate, config.lambda,
                                             GateMode::hard, config.ste_log_ratio_cap};
  diag.final_objective = kernels::parallel::moe_objective(final_args, {}, nullptr);
  const auto assign = hard_assignments(fit.gate, pset.x_prime());
  diag.usage.assign(K, 0.0);
  Vector pred(m);
  for (std::size_t j = 0; j < m; ++j) {
    diag.usage[assign[j]] += 1.0 / static_cast<double>(m);
    const auto r = static_cast<Eigen::Index>(j);
    const ExpertModel& e = fit.experts[assign[j]];
    pred[j] = e.mean(std::span<const double>(data.h0.row(r).data(), a),
                     std::span<const double>(data.h1.row(r).data(), b), data.t(r));
  }
  diag.local_r2 = r_squared(std::span<const double>(data.y.data(), m), pred);
  for (std::size_t k = 0; k < K; ++k)
    if (diag.usage[k] == 0.0 && config.warmup_epochs < diag.epochs_run)
      diag.warnings.push_back("expert " + std::to_string(k) + " collapsed (no rows assigned)");
  return fit;
}

int recommend_treatment(std::span<const double> beta_k2, std::span<const double> h1) {
  require_shape(beta_k2.size() == h1.size(), "recommend_treatment: length mismatch");
  double c = 0.0;
  for (std::size_t i = 0; i < h1.size(); ++i) c += beta_k2[i] * h1[i];
  return c > 0.0 ? 1 : 0;
}

Explanation explain_subject(std::span<const double> x_subject, const std::vector<ExpertModel>& experts,
                            const GatingModel& gate, const FeatureSpec& h0, const FeatureSpec& h1,
                            const PerturbationSet* pset) {
  require_shape(experts.size() == gate.K, "explain_subject: gate width != expert count");
  Explanation e;
  e.gate_distribution = responsibilities(gate, x_subject);
  e.selected_expert = argmax(e.gate_distribution);
  const ExpertModel& sel = experts[e.selected_expert];
  e.beta_k1 = sel.beta_k1;
  e.beta_k2 = sel.beta_k2;
  e.recommended_t = recommend_treatment(sel.beta_k2, h1.build(x_subject));
  if (pset && pset->has_predictions()) {
    e.subject_id = pset->subject_id;
    const auto assign = hard_assignments(gate, pset->x_prime());
    std::vector<std::size_t> rows;
    for (std::size_t j = 0; j < assign.size(); ++j)
      if (assign[j] == e.selected_expert) rows.push_back(j);
    e.gated_rows = rows.size();
    if (rows.size() >= 10) {
      const Fidelity f = expert_fidelity(sel, *pset, h0, h1, rows);
      e.local_r2 = f.r2;
      e.mean_abs_diff = f.mean_abs;
    }
  }
  return e;
}

namespace {
json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}
}  // namespace

json explanation_to_json(const Explanation& e) {
  return json{{"method", e.method},
              {"subject_id", e.subject_id},
              {"selected_expert", e.selected_expert},
              {"beta_k1", e.beta_k1},
              {"beta_k2", e.beta_k2},
              {"recommended_t", e.recommended_t},
              {"local_r2", optional_to_json(e.local_r2)},
              {"mean_abs_diff", optional_to_json(e.mean_abs_diff)},
              {"gated_rows", e.gated_rows},
              {"gate_distribution", e.gate_distribution}};
}

Explanation explanation_from_json(const json& j) {
  Explanation e;
  e.method = j.value("method", "li-itr");
  e.subject_id = j.at("subject_id").get<std::size_t>();
  e.selected_expert = j.value("selected_expert", std::size_t{0});
  e.beta_k1 = j.value("beta_k1", Vector{});
  e.beta_k2 = j.value("beta_k2", Vector{});
  e.recommended_t = j.at("recommended_t").get<int>();
  e.local_r2 = j.contains("local_r2") ? optional_from_json(j["local_r2"]) : std::nullopt;
  e.mean_abs_diff = j.contains("mean_abs_diff") ? optional_from_json(j["mean_abs_diff"]) : std::nullopt;
  e.gated_rows = j.value("gated_rows", std::size_t{0});
  e.gate_distribution = j.value("gate_distribution", Vector{});
  return e;
}

json experts_to_json(const std::vector<ExpertModel>& experts) {
  json arr = json::array();
  for (const auto& e : experts)
    arr.push_back({{"beta_k1", e.beta_k1}, {"beta_k2", e.beta_k2}, {"log_sigma", e.log_sigma}});
  return arr;
}

json gate_to_json(const GatingModel& gate) {
  json j = mlp_to_json(gate.net);
  j["scaler"] = scaler_to_json(gate.scaler);
  j["K"] = gate.K;
  return j;
}

}  // namespace liitr
