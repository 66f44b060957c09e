#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "liitr/blackbox.hpp"
#include "liitr/numkit/adamw.hpp"
#include "liitr/numkit/mlp.hpp"
#include "liitr/numkit/rng.hpp"
#include "liitr/numkit/scaler.hpp"
#include "liitr/numkit/serialize.hpp"

namespace liitr {

struct VaeConfig {
  std::size_t latent_dim = 2;
  double beta = 1.0;
  // Decoder scale on standardized X. The reconstruction term is
  // 0.5 * sum((x - x_hat) / recon_sd)^2. At 1.0 the KL term dominates and a
  // 2-d latent reconstructs poorly; 0.05 with 64-wide layers keeps held-out
  // error near 3% per column.
  double recon_sd = 0.05;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t max_epochs = 600;
  std::size_t patience = 50;
  std::size_t batch_size = 128;
  double val_fraction = 0.15;
  AdamWConfig optimizer{};
  double lr_final_fraction = 0.05;  // cosine decay floor over max_epochs
  std::uint64_t seed = 1;

  void validate() const;
};

// beta-VAE over standardized X. The encoder emits (mu, log sigma^2) stacked.
struct VaeModel {
  MlpModel encoder;
  MlpModel decoder;
  double beta = 1.0;
  double recon_sd = 1.0;
  std::size_t latent_dim = 0;
  Scaler scaler;
  TrainingLog log;
  Vector heldout_relative_mse;  // per standardized column, on the validation split
  std::vector<std::string> warnings;
  bool trained = false;

  std::size_t p() const { return scaler.dim(); }
};

struct ElboTerms {
  double reconstruction = 0.0;  // mean over rows of 0.5 * sum((x - x_hat)/recon_sd)^2
  double kl = 0.0;              // mean over rows
  double loss = 0.0;            // reconstruction + beta * kl  (negated modified ELBO)
};

// KL(N(mu, diag(exp(logvar))) || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)
double kl_diag_gaussian(std::span<const double> mu, std::span<const double> logvar);

// Negated modified ELBO averaged over the rows of x_std with reparameterization
// noise `eps` (rows x latent_dim) held fixed. Gradients are accumulated when the
// pointers are non-null.
ElboTerms vae_objective(const VaeModel& vae, const RowMajor& x_std, const RowMajor& eps,
                        MlpGradients* enc_grad = nullptr, MlpGradients* dec_grad = nullptr);

VaeModel fit_vae(const Matrix& x, const VaeConfig& config);
VaeModel fit_vae(const Dataset& data, const VaeConfig& config);

// Posterior means for raw covariate rows.
RowMajor encode_means(const VaeModel& vae, const Matrix& x);
Vector encode_mean(const VaeModel& vae, std::span<const double> x_row);
// Decoder means mapped back to raw covariate units.
Matrix decode(const VaeModel& vae, const RowMajor& z);
Matrix reconstruct(const VaeModel& vae, const Matrix& x);
// Per standardized column: mean squared reconstruction error / column variance.
Vector reconstruction_relative_mse(const VaeModel& vae, const Matrix& x);

enum class AlphaSchedule { fixed, linear_ramp };
std::string to_string(AlphaSchedule s);
AlphaSchedule alpha_schedule_from_string(const std::string& s);

struct PerturbConfig {
  double alpha = 0.5;
  std::size_t m = 20000;
  AlphaSchedule alpha_schedule = AlphaSchedule::fixed;

  void validate() const;
  // Scale applied to draw j (0-based): min(1, alpha_j).
  double scale_for(std::size_t j) const;
};

// m synthetic rows centred on one subject; columns of d_prime are (t', x'_1..x'_p).
struct PerturbationSet {
  std::size_t subject_id = 0;
  Matrix d_prime;
  Vector y_hat;
  Vector z_center;
  double alpha = 0.0;
  AlphaSchedule alpha_schedule = AlphaSchedule::fixed;
  std::uint64_t seed = 0;

  std::size_t m() const { return d_prime.rows(); }
  std::size_t p() const { return d_prime.cols() - 1; }
  bool has_predictions() const { return y_hat.size() == m() && m() > 0; }
  // Covariate block x' (m x p).
  Matrix x_prime() const;
  int t_prime(std::size_t j) const { return d_prime(j, 0) > 0.5 ? 1 : 0; }
};

// z' = z + scale * eps
Vector perturb_point(std::span<const double> z, double scale, std::span<const double> eps);

PerturbationSet perturb_latent(const VaeModel& vae, std::span<const double> x_subject,
                               const PerturbConfig& config, Rng& rng, std::size_t subject_id = 0);

// Fills y_hat with black-box predictions on every d_prime row.
void attach_predictions(PerturbationSet& pset, const BlackboxModel& bb);

struct DecorrelationReport {
  Matrix latent_correlation;
  double latent_max_offdiag = 0.0;
  Matrix raw_correlation;
  double raw_max_offdiag = 0.0;
};

DecorrelationReport latent_decorrelation_report(const VaeModel& vae, const Matrix& x);

// Per-column [min - k*sd, max + k*sd] of the training covariates.
struct SupportBox {
  Vector lo;
  Vector hi;

  static SupportBox fit(const Matrix& x, double k_sd = 3.0);
  bool contains(std::span<const double> x_row) const;
  double fraction_inside(const Matrix& x) const;
};

json vae_to_json(const VaeModel& vae, const json& config = json::object());
VaeModel vae_from_json(const json& j);

// CSV audit dump: t,x1..xp,y_hat
std::string pset_to_csv(const PerturbationSet& pset);

}  // namespace liitr
