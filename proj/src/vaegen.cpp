#include "liitr/vaegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "liitr/kernels/mlp_kernels.hpp"
#include "liitr/numkit/linalg.hpp"

namespace liitr {

void VaeConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("VAE latent_dim must be >= 1");
  if (!(beta > 0.0)) throw ConfigError("VAE beta must be > 0");
  if (!(recon_sd > 0.0)) throw ConfigError("VAE recon_sd must be > 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("VAE val_fraction must lie in (0, 1)");
  if (batch_size == 0 || max_epochs == 0) throw ConfigError("VAE batch/epochs must be > 0");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0))
    throw ConfigError("VAE lr_final_fraction must lie in (0, 1]");
  optimizer.validate();
}

double kl_diag_gaussian(std::span<const double> mu, std::span<const double> logvar) {
  require_shape(mu.size() == logvar.size(), "kl_diag_gaussian: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    kl += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  return 0.5 * kl;
}

ElboTerms vae_objective(const VaeModel& vae, const RowMajor& x_std, const RowMajor& eps,
                        MlpGradients* enc_grad, MlpGradients* dec_grad) {
  const Eigen::Index b = x_std.rows();
  const Eigen::Index q = static_cast<Eigen::Index>(vae.latent_dim);
  require_shape(eps.rows() == b && eps.cols() == q, "vae_objective: noise shape mismatch");
  const bool want_grad = enc_grad != nullptr || dec_grad != nullptr;
  MlpBatchCache enc_cache, dec_cache;
  const RowMajor enc_out = forward_batch(vae.encoder, x_std, want_grad ? &enc_cache : nullptr);
  const RowMajor mu = enc_out.leftCols(q);
  const RowMajor logvar = enc_out.rightCols(q);
  const RowMajor sigma = (0.5 * logvar.array()).exp().matrix();
  const RowMajor z = mu + sigma.cwiseProduct(eps);
  const RowMajor xhat = forward_batch(vae.decoder, z, want_grad ? &dec_cache : nullptr);

  const double inv_s2 = 1.0 / (vae.recon_sd * vae.recon_sd);
  const double inv_b = 1.0 / static_cast<double>(b);
  const RowMajor resid = xhat - x_std;
  ElboTerms terms;
  terms.reconstruction = 0.5 * inv_s2 * resid.squaredNorm() * inv_b;
  terms.kl = 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum() * inv_b;
  terms.loss = terms.reconstruction + vae.beta * terms.kl;
  if (!want_grad) return terms;

  MlpGradients dec_scratch = dec_grad ? MlpGradients{} : MlpGradients::zeros_like(vae.decoder);
  MlpGradients& dg = dec_grad ? *dec_grad : dec_scratch;
  RowMajor dz;
  backward_batch(vae.decoder, dec_cache, (inv_s2 * inv_b) * resid, dg, &dz);

  RowMajor denc(b, 2 * q);
  denc.leftCols(q) = dz + (vae.beta * inv_b) * mu;
  denc.rightCols(q) = (dz.array() * eps.array() * 0.5 * sigma.array() +
                       (vae.beta * inv_b * 0.5) * (logvar.array().exp() - 1.0))
                          .matrix();
  if (enc_grad) backward_batch(vae.encoder, enc_cache, denc, *enc_grad);
  return terms;
}

namespace {

RowMajor standardized(const VaeModel& vae, const Matrix& x) {
  require_shape(x.cols() == vae.p(), "VAE input width mismatch");
  return vae.scaler.transform(x).eigen();
}

RowMajor gather_rows(const RowMajor& m, std::span<const std::size_t> idx) {
  RowMajor out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

// Deterministic validation objective: decode the posterior mean, no sampling.
double mean_objective(const VaeModel& vae, const RowMajor& x_std) {
  const RowMajor zero = RowMajor::Zero(x_std.rows(), static_cast<Eigen::Index>(vae.latent_dim));
  return vae_objective(vae, x_std, zero).loss;
}

}  // namespace

VaeModel fit_vae(const Matrix& x, const VaeConfig& config) {
  config.validate();
  if (x.rows() < 100) throw ConfigError("VAE fit needs n >= 100");
  if (!x.all_finite()) throw ShapeError("VAE input has non-finite values");
  Rng rng = Rng(config.seed).child("vae");

  VaeModel vae;
  vae.beta = config.beta;
  vae.recon_sd = config.recon_sd;
  vae.latent_dim = config.latent_dim;
  vae.scaler = Scaler::fit(x);
  const std::size_t p = x.cols();
  std::vector<std::size_t> enc_sizes{p}, dec_sizes{config.latent_dim};
  enc_sizes.insert(enc_sizes.end(), config.hidden.begin(), config.hidden.end());
  enc_sizes.push_back(2 * config.latent_dim);
  dec_sizes.insert(dec_sizes.end(), config.hidden.rbegin(), config.hidden.rend());
  dec_sizes.push_back(p);
  vae.encoder = MlpModel::create(enc_sizes, Activation::relu, Activation::identity, rng);
  vae.decoder = MlpModel::create(dec_sizes, Activation::relu, Activation::identity, rng);

  const RowMajor xs = standardized(vae, x);
  const std::size_t n = x.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(n))), 1, n - 1);
  std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  const RowMajor x_val = gather_rows(xs, val_idx);
  const RowMajor x_train = gather_rows(xs, train_idx);

  AdamWState enc_opt(config.optimizer), dec_opt(config.optimizer);
  MlpGradients genc = MlpGradients::zeros_like(vae.encoder);
  MlpGradients gdec = MlpGradients::zeros_like(vae.decoder);
  MlpModel best_enc = vae.encoder, best_dec = vae.decoder;
  double best_val = mean_objective(vae, x_val);
  std::size_t since_best = 0;
  const Eigen::Index q = static_cast<Eigen::Index>(config.latent_dim);

  std::vector<std::size_t> order(train_idx.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    enc_opt.config.learning_rate = dec_opt.config.learning_rate = cosine_rate(
        config.optimizer.learning_rate, config.lr_final_fraction, epoch, config.max_epochs);
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      const RowMajor batch = gather_rows(
          x_train, std::span<const std::size_t>(order.data() + start, len));
      RowMajor eps(static_cast<Eigen::Index>(len), q);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
      genc.set_zero();
      gdec.set_zero();
      const ElboTerms t = vae_objective(vae, batch, eps, &genc, &gdec);
      if (!std::isfinite(t.loss))
        throw TrainingError("VAE training diverged at epoch " + std::to_string(epoch));
      epoch_loss += t.loss * static_cast<double>(len);
      adamw_step(vae.encoder.parameter_blocks(), genc.blocks(), enc_opt);
      adamw_step(vae.decoder.parameter_blocks(), gdec.blocks(), dec_opt);
    }
    const double va = mean_objective(vae, x_val);
    if (!std::isfinite(va)) throw TrainingError("VAE validation loss is non-finite");
    vae.log.train_mse.push_back(epoch_loss / static_cast<double>(order.size()));
    vae.log.val_mse.push_back(va);
    vae.log.epochs_run = epoch + 1;
    if (va < best_val) {
      best_val = va;
      best_enc = vae.encoder;
      best_dec = vae.decoder;
      vae.log.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  vae.encoder = std::move(best_enc);
  vae.decoder = std::move(best_dec);
  vae.trained = true;

  // Posterior-collapse check on the training rows.
  const RowMajor enc = kernels::parallel::mlp_forward_rows(vae.encoder, x_train);
  for (Eigen::Index d = 0; d < q; ++d) {
    double kl = 0.0;
    for (Eigen::Index r = 0; r < enc.rows(); ++r) {
      const double m = enc(r, d), lv = enc(r, q + d);
      kl += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
    }
    kl /= static_cast<double>(enc.rows());
    if (kl < 1e-4)
      vae.warnings.push_back("posterior collapse: latent dimension " + std::to_string(d) +
                             " has mean KL " + std::to_string(kl));
  }
  const Matrix x_val_raw = vae.scaler.inverse(from_eigen(x_val));
  vae.heldout_relative_mse = reconstruction_relative_mse(vae, x_val_raw);
  return vae;
}

VaeModel fit_vae(const Dataset& data, const VaeConfig& config) { return fit_vae(data.x, config); }

RowMajor encode_means(const VaeModel& vae, const Matrix& x) {
  if (!vae.trained) throw UsageError("VAE is not trained");
  const RowMajor out = kernels::parallel::mlp_forward_rows(vae.encoder, standardized(vae, x));
  return out.leftCols(static_cast<Eigen::Index>(vae.latent_dim));
}

Vector encode_mean(const VaeModel& vae, std::span<const double> x_row) {
  const RowMajor z = encode_means(vae, Matrix(1, x_row.size(), Vector(x_row.begin(), x_row.end())));
  return Vector(z.data(), z.data() + z.size());
}

Matrix decode(const VaeModel& vae, const RowMajor& z) {
  if (!vae.trained) throw UsageError("VAE is not trained");
  require_shape(static_cast<std::size_t>(z.cols()) == vae.latent_dim, "decode: latent width mismatch");
  const RowMajor xs = kernels::parallel::mlp_forward_rows(vae.decoder, z);
  Matrix out = vae.scaler.inverse(from_eigen(xs));
  if (!out.all_finite()) throw NumericError("decoder produced non-finite values");
  return out;
}

Matrix reconstruct(const VaeModel& vae, const Matrix& x) { return decode(vae, encode_means(vae, x)); }

Vector reconstruction_relative_mse(const VaeModel& vae, const Matrix& x) {
  const Matrix xs = vae.scaler.transform(x);
  const Matrix rs = vae.scaler.transform(reconstruct(vae, x));
  Vector out(x.cols());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    const Vector col = xs.column(c);
    double se = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) se += (xs(r, c) - rs(r, c)) * (xs(r, c) - rs(r, c));
    const double var = variance(col);
    out[c] = (se / static_cast<double>(x.rows())) / (var > 0.0 ? var : 1.0);
  }
  return out;
}

std::string to_string(AlphaSchedule s) {
  return s == AlphaSchedule::fixed ? "fixed" : "linear_ramp";
}

AlphaSchedule alpha_schedule_from_string(const std::string& s) {
  if (s == "fixed") return AlphaSchedule::fixed;
  if (s == "linear_ramp") return AlphaSchedule::linear_ramp;
  throw ConfigError("unknown alpha schedule '" + s + "'");
}

void PerturbConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (m < 100) throw ConfigError("perturbation count m must be >= 100");
}

double PerturbConfig::scale_for(std::size_t j) const {
  const double a = alpha_schedule == AlphaSchedule::fixed
                       ? alpha
                       : alpha * static_cast<double>(j + 1) / static_cast<double>(m);
  return std::min(1.0, a);
}

Matrix PerturbationSet::x_prime() const {
  Matrix x(m(), p());
  for (std::size_t r = 0; r < m(); ++r)
    for (std::size_t c = 0; c < p(); ++c) x(r, c) = d_prime(r, c + 1);
  return x;
}

Vector perturb_point(std::span<const double> z, double scale, std::span<const double> eps) {
  require_shape(z.size() == eps.size(), "perturb_point: length mismatch");
  Vector out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] + scale * eps[i];
  return out;
}

PerturbationSet perturb_latent(const VaeModel& vae, std::span<const double> x_subject,
                               const PerturbConfig& config, Rng& rng, std::size_t subject_id) {
  config.validate();
  if (!vae.trained) throw UsageError("perturb_latent: VAE is not trained");
  require_shape(x_subject.size() == vae.p(), "perturb_latent: subject length mismatch");

  PerturbationSet ps;
  ps.subject_id = subject_id;
  ps.alpha = config.alpha;
  ps.alpha_schedule = config.alpha_schedule;
  ps.seed = rng.seed();
  ps.z_center = encode_mean(vae, x_subject);

  const std::size_t q = vae.latent_dim;
  RowMajor z(static_cast<Eigen::Index>(config.m), static_cast<Eigen::Index>(q));
  std::vector<int> t(config.m);
  Vector eps(q);
  // Per row: q normals for eps', then one Bernoulli(0.5) for t'.
  for (std::size_t j = 0; j < config.m; ++j) {
    for (double& e : eps) e = rng.normal();
    const Vector zp = perturb_point(ps.z_center, config.scale_for(j), eps);
    for (std::size_t d = 0; d < q; ++d)
      z(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d)) = zp[d];
    t[j] = rng.bernoulli(0.5) ? 1 : 0;
  }
  const Matrix x = decode(vae, z);
  ps.d_prime = Matrix(config.m, vae.p() + 1);
  for (std::size_t j = 0; j < config.m; ++j) {
    ps.d_prime(j, 0) = t[j];
    for (std::size_t c = 0; c < vae.p(); ++c) ps.d_prime(j, c + 1) = x(j, c);
  }
  return ps;
}

void attach_predictions(PerturbationSet& pset, const BlackboxModel& bb) {
  if (!pset.y_hat.empty()) throw UsageError("attach_predictions: predictions already attached");
  require_shape(pset.d_prime.cols() == bb.p() + 1, "attach_predictions: width mismatch");
  pset.y_hat = predict_batch(bb, pset.d_prime);
}

DecorrelationReport latent_decorrelation_report(const VaeModel& vae, const Matrix& x) {
  DecorrelationReport r;
  r.latent_correlation = correlation_matrix(from_eigen(encode_means(vae, x)));
  r.latent_max_offdiag = max_abs_off_diagonal(r.latent_correlation);
  r.raw_correlation = correlation_matrix(x);
  r.raw_max_offdiag = max_abs_off_diagonal(r.raw_correlation);
  return r;
}

SupportBox SupportBox::fit(const Matrix& x, double k_sd) {
  SupportBox b;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    const Vector col = x.column(c);
    const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
    const double sd = std::sqrt(variance(col));
    b.lo.push_back(*mn - k_sd * sd);
    b.hi.push_back(*mx + k_sd * sd);
  }
  return b;
}

bool SupportBox::contains(std::span<const double> x_row) const {
  require_shape(x_row.size() == lo.size(), "SupportBox: width mismatch");
  for (std::size_t c = 0; c < x_row.size(); ++c)
    if (!(x_row[c] >= lo[c] && x_row[c] <= hi[c])) return false;
  return true;
}

double SupportBox::fraction_inside(const Matrix& x) const {
  if (x.rows() == 0) return 1.0;
  std::size_t inside = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) inside += contains(x.row(r)) ? 1 : 0;
  return static_cast<double>(inside) / static_cast<double>(x.rows());
}

json vae_to_json(const VaeModel& vae, const json& config) {
  return json{{"kind", "vae"},
              {"encoder", mlp_to_json(vae.encoder)},
              {"decoder", mlp_to_json(vae.decoder)},
              {"beta", vae.beta},
              {"recon_sd", vae.recon_sd},
              {"latent_dim", vae.latent_dim},
              {"scaler", scaler_to_json(vae.scaler)},
              {"heldout_relative_mse", vae.heldout_relative_mse},
              {"warnings", vae.warnings},
              {"epochs_run", vae.log.epochs_run},
              {"best_epoch", vae.log.best_epoch},
              {"config", config}};
}

VaeModel vae_from_json(const json& j) {
  if (j.value("kind", "") != "vae") throw UsageError("model file is not a VAE model");
  VaeModel v;
  v.encoder = mlp_from_json(j.at("encoder"));
  v.decoder = mlp_from_json(j.at("decoder"));
  v.beta = j.at("beta").get<double>();
  v.recon_sd = j.value("recon_sd", 1.0);
  v.latent_dim = j.at("latent_dim").get<std::size_t>();
  v.scaler = scaler_from_json(j.at("scaler"));
  v.heldout_relative_mse = j.value("heldout_relative_mse", Vector{});
  v.warnings = j.value("warnings", std::vector<std::string>{});
  v.log.epochs_run = j.value("epochs_run", std::size_t{0});
  v.log.best_epoch = j.value("best_epoch", std::size_t{0});
  require_shape(v.encoder.output_dim() == 2 * v.latent_dim && v.decoder.output_dim() == v.p() &&
                    v.encoder.input_dim() == v.p() && v.decoder.input_dim() == v.latent_dim,
                "VAE networks do not match the declared dimensions");
  v.trained = true;
  return v;
}

std::string pset_to_csv(const PerturbationSet& pset) {
  std::string out = "t";
  for (std::size_t c = 0; c < pset.p(); ++c) out += ",x" + std::to_string(c + 1);
  out += ",y_hat\n";
  char buf[64];
  for (std::size_t r = 0; r < pset.m(); ++r) {
    out += std::to_string(pset.t_prime(r));
    for (std::size_t c = 0; c < pset.p(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.17g", pset.d_prime(r, c + 1));
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g\n", pset.has_predictions() ? pset.y_hat[r] : 0.0);
    out += buf;
  }
  return out;
}

}  // namespace liitr
