#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "liitr/numkit/adamw.hpp"
#include "liitr/numkit/mlp.hpp"
#include "liitr/numkit/rng.hpp"
#include "liitr/numkit/scaler.hpp"
#include "liitr/numkit/serialize.hpp"
#include "liitr/vaegen.hpp"

namespace liitr {

// Selects covariate columns (0-based, into x) and optionally prepends an intercept.
struct FeatureSpec {
  std::vector<std::size_t> columns;
  bool intercept = false;

  std::size_t size() const { return columns.size() + (intercept ? 1 : 0); }
  void fill(std::span<const double> x_row, std::span<double> out) const;
  Vector build(std::span<const double> x_row) const;
  std::vector<std::string> names(const std::vector<std::string>& x_names) const;
};

// Interpretable local model: mu = beta_k1' H0 + (beta_k2' H1) t.
struct ExpertModel {
  Vector beta_k1;
  Vector beta_k2;
  double log_sigma = 0.0;

  double sigma() const;
  double mean(std::span<const double> h0, std::span<const double> h1, double t) const;
};

// Maps standardized x' to K logits. Treatment never enters the gate.
struct GatingModel {
  MlpModel net;
  Scaler scaler;
  std::size_t K = 0;

  Vector logits(std::span<const double> x_row) const;
};

enum class GateMode { soft, hard };

struct MoEConfig {
  std::size_t K = 4;
  double lambda = 0.1;
  std::size_t warmup_epochs = 50;
  std::size_t max_epochs = 400;
  std::size_t batch_size = 512;
  FeatureSpec h0{{0, 1, 2, 3}, false};
  FeatureSpec h1{{0, 1}, true};
  std::vector<std::size_t> gate_hidden{32, 32};
  double lr_experts = 1e-2;
  double lr_gate = 1e-3;
  double lr_final_fraction = 0.05;  // cosine decay floor, as a fraction of the initial rate
  double weight_decay = 0.0;        // on expert coefficients only
  double init_jitter = 0.05;
  double min_sigma = 1e-3;
  // Hard-mode backward uses N_k / N_selected; the log of that ratio is capped here.
  double ste_log_ratio_cap = 20.0;
  // Stop the hard phase once the epoch loss fails to improve by rel_tol for `patience` epochs.
  double rel_tol = 1e-4;
  std::size_t patience = 20;

  void validate() const;
};

// Row-aligned design extracted from a PerturbationSet.
struct MoEData {
  RowMajor h0;      // m x |H0|
  RowMajor h1;      // m x |H1|
  Eigen::VectorXd t;
  Eigen::VectorXd y;
  RowMajor gate_x;  // standardized x'

  std::size_t m() const { return static_cast<std::size_t>(y.size()); }
};

MoEData make_moe_data(const PerturbationSet& pset, const FeatureSpec& h0, const FeatureSpec& h1,
                      const Scaler& gate_scaler);

struct MoEGradient {
  std::vector<Vector> beta_k1;
  std::vector<Vector> beta_k2;
  Vector log_sigma;
  MlpGradients gate;

  static MoEGradient zeros_like(const std::vector<ExpertModel>& experts, const GatingModel& gate);
  void set_zero();
  void add(const MoEGradient& other);
};

// pi_k = exp(h_k) / sum_l exp(h_l), with max-logit subtraction.
Vector softmax(std::span<const double> logits);
Vector log_softmax(std::span<const double> logits);
Vector responsibilities(const GatingModel& gate, std::span<const double> x_row);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

// Forward value e_argmax(pi). The backward contract (straight-through) is
// implemented inside the objective kernels: gradients reach the logits
// through the soft probabilities.
Vector hard_gate(std::span<const double> pi);

// Sum over rows of log sum_k w_jk N(y_j | mu_jk, sigma_k^2) + lambda * sum_j pi_j' log pi_j,
// where w = pi (soft) or e_argmax(pi) (hard). Entropy always uses the soft pi.
double penalized_loglik(const PerturbationSet& pset, const std::vector<ExpertModel>& experts,
                        const GatingModel& gate, const MoEConfig& config,
                        GateMode mode = GateMode::soft);

struct SurrogateDiagnostics {
  double final_objective = 0.0;  // penalized log-likelihood (hard mode) over all rows
  std::vector<double> usage;     // fraction of rows hard-gated to each expert
  double local_r2 = 0.0;         // hard-gated mixture mean vs y_hat
  std::size_t epochs_run = 0;
  std::vector<double> epoch_loss;
  std::vector<std::string> warnings;
};

struct SurrogateFit {
  std::vector<ExpertModel> experts;
  GatingModel gate;
  SurrogateDiagnostics diagnostics;
};

SurrogateFit fit_surrogate(const PerturbationSet& pset, const MoEConfig& config, Rng& rng);

// Per-row expert index chosen by the hard gate.
std::vector<std::size_t> hard_assignments(const GatingModel& gate, const Matrix& x);

struct Explanation {
  std::string method = "li-itr";
  std::size_t subject_id = 0;
  std::size_t selected_expert = 0;
  Vector beta_k1;
  Vector beta_k2;
  int recommended_t = 0;
  std::optional<double> local_r2;  // empty when the selected partition is too small
  std::optional<double> mean_abs_diff;
  std::size_t gated_rows = 0;
  Vector gate_distribution;
};

// 1 iff beta_k2' H1 > 0 (the H0 part does not depend on t); ties go to 0.
int recommend_treatment(std::span<const double> beta_k2, std::span<const double> h1);

Explanation explain_subject(std::span<const double> x_subject, const std::vector<ExpertModel>& experts,
                            const GatingModel& gate, const FeatureSpec& h0, const FeatureSpec& h1,
                            const PerturbationSet* pset = nullptr);

json explanation_to_json(const Explanation& e);
Explanation explanation_from_json(const json& j);

json experts_to_json(const std::vector<ExpertModel>& experts);
json gate_to_json(const GatingModel& gate);

}  // namespace liitr
