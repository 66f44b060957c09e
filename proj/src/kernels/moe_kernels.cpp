#include "liitr/kernels/moe_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "liitr/kernels/mlp_kernels.hpp"

namespace liitr::kernels {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)
constexpr std::size_t kMaxK = 16;

struct RowGrad {
  double dmu[kMaxK];
  double dlog_sigma[kMaxK];
  double dlogit[kMaxK];
};

// Objective contribution of one row and its derivatives w.r.t. the expert means,
// the log-scales and the gate logits.
double row_terms(const double* logits, const double* mu, double y, const double* log_sigma,
                 std::size_t K, double lambda, GateMode mode, double cap, RowGrad* g) {
  double hmax = logits[0];
  for (std::size_t k = 1; k < K; ++k) hmax = std::max(hmax, logits[k]);
  double z = 0.0;
  for (std::size_t k = 0; k < K; ++k) z += std::exp(logits[k] - hmax);
  const double lse_h = hmax + std::log(z);
  double logpi[kMaxK]{}, pi[kMaxK]{}, logn[kMaxK]{}, zsq[kMaxK]{};
  for (std::size_t k = 0; k < K; ++k) {
    logpi[k] = logits[k] - lse_h;
    pi[k] = std::exp(logpi[k]);
    const double s = std::exp(log_sigma[k]);
    const double zk = (y - mu[k]) / s;
    zsq[k] = zk * zk;
    logn[k] = -kHalfLog2Pi - log_sigma[k] - 0.5 * zsq[k];
  }
  double entropy = 0.0;  // sum pi log pi; 0 log 0 := 0
  for (std::size_t k = 0; k < K; ++k)
    if (pi[k] > 0.0) entropy += pi[k] * logpi[k];

  double obj;
  if (mode == GateMode::soft) {
    double amax = logpi[0] + logn[0];
    for (std::size_t k = 1; k < K; ++k) amax = std::max(amax, logpi[k] + logn[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(logpi[k] + logn[k] - amax);
    obj = amax + std::log(s);
    if (g) {
      for (std::size_t k = 0; k < K; ++k) {
        const double r = std::exp(logpi[k] + logn[k] - obj);
        const double inv_var = std::exp(-2.0 * log_sigma[k]);
        g->dmu[k] = r * (y - mu[k]) * inv_var;
        g->dlog_sigma[k] = r * (zsq[k] - 1.0);
        g->dlogit[k] = r - pi[k];
      }
    }
  } else {
    std::size_t sel = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (pi[k] > pi[sel]) sel = k;
    obj = logn[sel];
    if (g) {
      double ratio[kMaxK];
      double mean_ratio = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        ratio[k] = std::exp(std::min(logn[k] - logn[sel], cap));
        mean_ratio += pi[k] * ratio[k];
      }
      for (std::size_t k = 0; k < K; ++k) {
        g->dmu[k] = 0.0;
        g->dlog_sigma[k] = 0.0;
        g->dlogit[k] = pi[k] * (ratio[k] - mean_ratio);
      }
      const double inv_var = std::exp(-2.0 * log_sigma[sel]);
      g->dmu[sel] = (y - mu[sel]) * inv_var;
      g->dlog_sigma[sel] = zsq[sel] - 1.0;
    }
  }
  obj += lambda * entropy;
  if (g && lambda != 0.0)
    for (std::size_t k = 0; k < K; ++k) g->dlogit[k] += lambda * pi[k] * (logpi[k] - entropy);
  return obj;
}

void check_args(const MoEObjectiveArgs& a) {
  const std::size_t K = a.experts.size();
  require_shape(K >= 1 && K <= kMaxK, "moe_objective: expert count out of range");
  require_shape(a.gate.net.output_dim() == K, "moe_objective: gate width != expert count");
  require_shape(static_cast<std::size_t>(a.data.gate_x.cols()) == a.gate.net.input_dim(),
                "moe_objective: gate input width mismatch");
  for (const auto& e : a.experts)
    require_shape(e.beta_k1.size() == static_cast<std::size_t>(a.data.h0.cols()) &&
                      e.beta_k2.size() == static_cast<std::size_t>(a.data.h1.cols()),
                  "moe_objective: expert coefficient length mismatch");
}

std::vector<std::size_t> all_rows(std::size_t m) {
  std::vector<std::size_t> r(m);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

namespace serial {

double moe_objective(const MoEObjectiveArgs& args, std::span<const std::size_t> rows,
                     MoEGradient* grad) {
  check_args(args);
  std::vector<std::size_t> owned;
  if (rows.empty()) {
    owned = all_rows(args.data.m());
    rows = owned;
  }
  const std::size_t K = args.experts.size();
  const std::size_t a = static_cast<std::size_t>(args.data.h0.cols());
  const std::size_t b = static_cast<std::size_t>(args.data.h1.cols());
  const std::size_t p = static_cast<std::size_t>(args.data.gate_x.cols());
  double log_sigma[kMaxK];
  for (std::size_t k = 0; k < K; ++k) log_sigma[k] = args.experts[k].log_sigma;

  MlpCache cache;
  RowGrad g{};
  double total = 0.0;
  for (std::size_t j : rows) {
    const auto idx = static_cast<Eigen::Index>(j);
    const std::span<const double> gx(args.data.gate_x.row(idx).data(), p);
    const Vector logits = forward(args.gate.net, gx, cache);
    const double t = args.data.t(idx);
    const double y = args.data.y(idx);
    double mu[kMaxK];
    for (std::size_t k = 0; k < K; ++k) {
      double m0 = 0.0, m1 = 0.0;
      for (std::size_t c = 0; c < a; ++c) m0 += args.experts[k].beta_k1[c] * args.data.h0(idx, static_cast<Eigen::Index>(c));
      for (std::size_t c = 0; c < b; ++c) m1 += args.experts[k].beta_k2[c] * args.data.h1(idx, static_cast<Eigen::Index>(c));
      mu[k] = m0 + t * m1;
    }
    total += row_terms(logits.data(), mu, y, log_sigma, K, args.lambda, args.mode,
                       args.ste_log_ratio_cap, grad ? &g : nullptr);
    if (!grad) continue;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t c = 0; c < a; ++c)
        grad->beta_k1[k][c] += g.dmu[k] * args.data.h0(idx, static_cast<Eigen::Index>(c));
      for (std::size_t c = 0; c < b; ++c)
        grad->beta_k2[k][c] += g.dmu[k] * t * args.data.h1(idx, static_cast<Eigen::Index>(c));
      grad->log_sigma[k] += g.dlog_sigma[k];
    }
    const MlpBackward bw = backward(args.gate.net, cache, gx, std::span<const double>(g.dlogit, K));
    grad->gate.add(bw.grads);
  }
  return total;
}

}  // namespace serial

namespace parallel {

namespace {

double block_objective(const MoEObjectiveArgs& args, std::span<const std::size_t> rows,
                       MoEGradient* grad) {
  const std::size_t K = args.experts.size();
  const Eigen::Index B = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index a = args.data.h0.cols(), b = args.data.h1.cols();
  RowMajor gx(B, args.data.gate_x.cols()), h0(B, a), h1(B, b);
  Eigen::VectorXd t(B), y(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto j = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    gx.row(i) = args.data.gate_x.row(j);
    h0.row(i) = args.data.h0.row(j);
    h1.row(i) = args.data.h1.row(j);
    t(i) = args.data.t(j);
    y(i) = args.data.y(j);
  }
  RowMajor b1(static_cast<Eigen::Index>(K), a), b2(static_cast<Eigen::Index>(K), b);
  double log_sigma[kMaxK];
  for (std::size_t k = 0; k < K; ++k) {
    for (Eigen::Index c = 0; c < a; ++c) b1(static_cast<Eigen::Index>(k), c) = args.experts[k].beta_k1[static_cast<std::size_t>(c)];
    for (Eigen::Index c = 0; c < b; ++c) b2(static_cast<Eigen::Index>(k), c) = args.experts[k].beta_k2[static_cast<std::size_t>(c)];
    log_sigma[k] = args.experts[k].log_sigma;
  }
  MlpBatchCache cache;
  const RowMajor logits = forward_batch(args.gate.net, gx, grad ? &cache : nullptr);
  RowMajor mu = h0 * b1.transpose();
  mu += t.asDiagonal() * (h1 * b2.transpose());

  RowMajor dmu(B, static_cast<Eigen::Index>(K)), dlogit(B, static_cast<Eigen::Index>(K));
  double dls[kMaxK] = {};
  RowGrad g{};
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    total += row_terms(logits.row(i).data(), mu.row(i).data(), y(i), log_sigma, K, args.lambda,
                       args.mode, args.ste_log_ratio_cap, grad ? &g : nullptr);
    if (!grad) continue;
    for (std::size_t k = 0; k < K; ++k) {
      dmu(i, static_cast<Eigen::Index>(k)) = g.dmu[k];
      dlogit(i, static_cast<Eigen::Index>(k)) = g.dlogit[k];
      dls[k] += g.dlog_sigma[k];
    }
  }
  if (!grad) return total;
  const RowMajor gb1 = dmu.transpose() * h0;
  const RowMajor gb2 = (t.asDiagonal() * dmu).transpose() * h1;
  for (std::size_t k = 0; k < K; ++k) {
    for (Eigen::Index c = 0; c < a; ++c) grad->beta_k1[k][static_cast<std::size_t>(c)] += gb1(static_cast<Eigen::Index>(k), c);
    for (Eigen::Index c = 0; c < b; ++c) grad->beta_k2[k][static_cast<std::size_t>(c)] += gb2(static_cast<Eigen::Index>(k), c);
    grad->log_sigma[k] += dls[k];
  }
  backward_batch(args.gate.net, cache, dlogit, grad->gate);
  return total;
}

}  // namespace

double moe_objective(const MoEObjectiveArgs& args, std::span<const std::size_t> rows,
                     MoEGradient* grad) {
  check_args(args);
  std::vector<std::size_t> owned;
  if (rows.empty()) {
    owned = all_rows(args.data.m());
    rows = owned;
  }
  const std::size_t nblocks = (rows.size() + kBlockRows - 1) / kBlockRows;
  if (nblocks <= 1) return block_objective(args, rows, grad);

  std::vector<double> partial(nblocks, 0.0);
  std::vector<MoEGradient> partial_grad;
  if (grad)
    partial_grad.assign(nblocks, MoEGradient::zeros_like(args.experts, args.gate));
#pragma omp parallel for schedule(static)
  for (std::size_t blk = 0; blk < nblocks; ++blk) {
    const std::size_t begin = blk * kBlockRows;
    const std::size_t len = std::min(kBlockRows, rows.size() - begin);
    partial[blk] = block_objective(args, rows.subspan(begin, len),
                                   grad ? &partial_grad[blk] : nullptr);
  }
  double total = 0.0;
  for (std::size_t blk = 0; blk < nblocks; ++blk) {
    total += partial[blk];
    if (grad) grad->add(partial_grad[blk]);
  }
  return total;
}

}  // namespace parallel

}  // namespace liitr::kernels
