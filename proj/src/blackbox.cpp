#include "liitr/blackbox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "liitr/kernels/mlp_kernels.hpp"
#include "liitr/numkit/linalg.hpp"

namespace liitr {

void BlackboxConfig::validate() const {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("blackbox val_fraction must lie in (0, 1)");
  if (batch_size == 0 || max_epochs == 0) throw ConfigError("blackbox batch/epochs must be > 0");
  optimizer.validate();
}

namespace {

// (t, standardized x) rows for the network.
RowMajor network_input(const BlackboxModel& m, const Matrix& d) {
  require_shape(d.cols() == m.p() + 1,
                "blackbox input needs " + std::to_string(m.p() + 1) + " columns (t, x)");
  RowMajor in(static_cast<Eigen::Index>(d.rows()), static_cast<Eigen::Index>(d.cols()));
  for (std::size_t r = 0; r < d.rows(); ++r) {
    in(static_cast<Eigen::Index>(r), 0) = d(r, 0);
    for (std::size_t c = 0; c < m.p(); ++c)
      in(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c + 1)) =
          (d(r, c + 1) - m.input_scaler.mean[c]) / m.input_scaler.sd[c];
  }
  return in;
}

Matrix design_from(const Dataset& data) {
  Matrix d(data.n(), data.p() + 1);
  for (std::size_t r = 0; r < data.n(); ++r) {
    d(r, 0) = data.t[r];
    for (std::size_t c = 0; c < data.p(); ++c) d(r, c + 1) = data.x(r, c);
  }
  return d;
}

double mse_on(const MlpModel& net, const RowMajor& in, const Eigen::VectorXd& target) {
  if (in.rows() == 0) return 0.0;
  const RowMajor out = kernels::parallel::mlp_forward_rows(net, in);
  return (out.col(0) - target).squaredNorm() / static_cast<double>(in.rows());
}

}  // namespace

BlackboxModel fit_blackbox(const Dataset& data, const BlackboxConfig& config) {
  config.validate();
  data.validate();
  if (data.n() < 50) throw ConfigError("blackbox fit needs n >= 50");

  Rng rng = Rng(config.seed).child("blackbox");
  BlackboxModel model;
  model.seed = config.seed;
  model.input_scaler = Scaler::fit(data.x);
  model.target_scaler = Scaler::fit(Matrix(data.n(), 1, data.y));

  std::vector<std::size_t> sizes{data.p() + 1};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(1);
  model.net = MlpModel::create(sizes, Activation::relu, Activation::identity, rng);

  const std::size_t n = data.n();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(n))), 1, n - 1);
  std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  const Matrix design = design_from(data);
  const RowMajor all_in = network_input(model, design);
  Eigen::VectorXd all_y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    all_y(static_cast<Eigen::Index>(i)) =
        (data.y[i] - model.target_scaler.mean[0]) / model.target_scaler.sd[0];

  auto gather = [&](const std::vector<std::size_t>& idx, RowMajor& in, Eigen::VectorXd& y) {
    in.resize(static_cast<Eigen::Index>(idx.size()), all_in.cols());
    y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      in.row(static_cast<Eigen::Index>(i)) = all_in.row(static_cast<Eigen::Index>(idx[i]));
      y(static_cast<Eigen::Index>(i)) = all_y(static_cast<Eigen::Index>(idx[i]));
    }
  };
  RowMajor val_in, train_in;
  Eigen::VectorXd val_y, train_y;
  gather(val_idx, val_in, val_y);
  gather(train_idx, train_in, train_y);

  AdamWState opt(config.optimizer);
  MlpGradients grads = MlpGradients::zeros_like(model.net);
  MlpBatchCache cache;
  MlpModel best = model.net;
  double best_val = mse_on(model.net, val_in, val_y);
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_idx.size());
  std::iota(order.begin(), order.end(), 0);
  RowMajor batch_in;
  Eigen::VectorXd batch_y;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      batch_in.resize(static_cast<Eigen::Index>(len), train_in.cols());
      batch_y.resize(static_cast<Eigen::Index>(len));
      for (std::size_t i = 0; i < len; ++i) {
        batch_in.row(static_cast<Eigen::Index>(i)) =
            train_in.row(static_cast<Eigen::Index>(order[start + i]));
        batch_y(static_cast<Eigen::Index>(i)) = train_y(static_cast<Eigen::Index>(order[start + i]));
      }
      const RowMajor out = forward_batch(model.net, batch_in, &cache);
      RowMajor dout = (2.0 / static_cast<double>(len)) * (out.col(0) - batch_y);
      grads.set_zero();
      backward_batch(model.net, cache, dout, grads);
      adamw_step(model.net.parameter_blocks(), grads.blocks(), opt);
    }
    const double tr = mse_on(model.net, train_in, train_y);
    const double va = mse_on(model.net, val_in, val_y);
    if (!std::isfinite(tr) || !std::isfinite(va))
      throw TrainingError("blackbox training diverged at epoch " + std::to_string(epoch));
    model.log.train_mse.push_back(tr);
    model.log.val_mse.push_back(va);
    model.log.epochs_run = epoch + 1;
    if (va < best_val) {
      best_val = va;
      best = model.net;
      model.log.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.net = std::move(best);

  auto r2_on = [&](const std::vector<std::size_t>& idx) {
    Vector truth, pred;
    const Vector all_pred = predict_batch(model, design.select_rows(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) truth.push_back(data.y[idx[i]]);
    return r_squared(truth, all_pred);
  };
  model.train_r2 = r2_on(train_idx);
  model.val_r2 = r2_on(val_idx);
  return model;
}

double predict(const BlackboxModel& model, std::span<const double> d_row) {
  require_shape(d_row.size() == model.p() + 1,
                "predict: row length " + std::to_string(d_row.size()) + " != " +
                    std::to_string(model.p() + 1));
  Vector in(d_row.size());
  in[0] = d_row[0];
  for (std::size_t c = 0; c < model.p(); ++c)
    in[c + 1] = (d_row[c + 1] - model.input_scaler.mean[c]) / model.input_scaler.sd[c];
  const Vector out = forward(model.net, in);
  return out[0] * model.target_scaler.sd[0] + model.target_scaler.mean[0];
}

Vector predict_batch(const BlackboxModel& model, const Matrix& d) {
  const RowMajor out = kernels::parallel::mlp_forward_rows(model.net, network_input(model, d));
  Vector y(d.rows());
  for (std::size_t r = 0; r < d.rows(); ++r)
    y[r] = out(static_cast<Eigen::Index>(r), 0) * model.target_scaler.sd[0] +
           model.target_scaler.mean[0];
  return y;
}

int blackbox_itr(const BlackboxModel& model, std::span<const double> x_row) {
  require_shape(x_row.size() == model.p(), "blackbox_itr: covariate length mismatch");
  Vector d(model.p() + 1);
  std::copy(x_row.begin(), x_row.end(), d.begin() + 1);
  d[0] = 0.0;
  const double y0 = predict(model, d);
  d[0] = 1.0;
  const double y1 = predict(model, d);
  return y1 > y0 ? 1 : 0;
}

std::vector<int> blackbox_itr_batch(const BlackboxModel& model, const Matrix& x) {
  require_shape(x.cols() == model.p(), "blackbox_itr_batch: covariate width mismatch");
  Matrix d(2 * x.rows(), x.cols() + 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (int t = 0; t < 2; ++t) {
      d(2 * r + static_cast<std::size_t>(t), 0) = t;
      for (std::size_t c = 0; c < x.cols(); ++c) d(2 * r + static_cast<std::size_t>(t), c + 1) = x(r, c);
    }
  const Vector y = predict_batch(model, d);
  std::vector<int> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = y[2 * r + 1] > y[2 * r] ? 1 : 0;
  return out;
}

json blackbox_to_json(const BlackboxModel& model, const json& config) {
  json j = mlp_to_json(model.net);
  j["kind"] = "blackbox";
  j["scaler"] = scaler_to_json(model.input_scaler);
  j["target_scaler"] = scaler_to_json(model.target_scaler);
  j["metadata"] = {{"train_r2", model.train_r2},
                   {"val_r2", model.val_r2},
                   {"seed", model.seed},
                   {"epochs_run", model.log.epochs_run},
                   {"best_epoch", model.log.best_epoch},
                   {"config", config}};
  return j;
}

BlackboxModel blackbox_from_json(const json& j) {
  if (j.value("kind", "") != "blackbox") throw UsageError("model file is not a blackbox model");
  BlackboxModel m;
  m.net = mlp_from_json(j);
  m.input_scaler = scaler_from_json(j.at("scaler"));
  m.target_scaler = scaler_from_json(j.at("target_scaler"));
  const auto& meta = j.at("metadata");
  m.train_r2 = meta.value("train_r2", 0.0);
  m.val_r2 = meta.value("val_r2", 0.0);
  m.seed = meta.value("seed", std::uint64_t{0});
  m.log.epochs_run = meta.value("epochs_run", std::size_t{0});
  m.log.best_epoch = meta.value("best_epoch", std::size_t{0});
  require_shape(m.net.input_dim() == m.p() + 1, "blackbox scaler does not match network input");
  return m;
}

}  // namespace liitr
