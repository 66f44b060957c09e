// Serial reference vs blocked OpenMP kernels on the shapes used by one surrogate fit.
#include <benchmark/benchmark.h>

#include "liitr/kernels/mlp_kernels.hpp"
#include "liitr/kernels/moe_kernels.hpp"

using namespace liitr;

namespace {

struct MoEFixture {
  PerturbationSet pset;
  std::vector<ExpertModel> experts;
  GatingModel gate;
  MoEConfig cfg;
  MoEData data;

  explicit MoEFixture(std::size_t m) {
    Rng rng(1);
    pset.d_prime = Matrix(m, 5);
    pset.y_hat.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      pset.d_prime(j, 0) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      for (std::size_t c = 1; c < 5; ++c) pset.d_prime(j, c) = rng.normal();
      pset.y_hat[j] = rng.normal();
    }
    experts.resize(cfg.K);
    for (auto& e : experts) {
      e.beta_k1.assign(cfg.h0.size(), 0.1);
      e.beta_k2.assign(cfg.h1.size(), -0.2);
    }
    gate.net = MlpModel::create({4, 32, 32, cfg.K}, Activation::relu, Activation::identity, rng);
    gate.scaler = Scaler::identity(4);
    gate.K = cfg.K;
    data = make_moe_data(pset, cfg.h0, cfg.h1, gate.scaler);
  }
};

template <bool Parallel>
void BM_MoEObjective(benchmark::State& state) {
  MoEFixture f(static_cast<std::size_t>(state.range(0)));
  const kernels::MoEObjectiveArgs args{f.data, f.experts, f.gate, f.cfg.lambda, GateMode::soft, 20.0};
  MoEGradient g = MoEGradient::zeros_like(f.experts, f.gate);
  for (auto _ : state) {
    g.set_zero();
    const double v = Parallel ? kernels::parallel::moe_objective(args, {}, &g)
                              : kernels::serial::moe_objective(args, {}, &g);
    benchmark::DoNotOptimize(v);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_MlpForward(benchmark::State& state) {
  Rng rng(2);
  const MlpModel net = MlpModel::create({5, 64, 64, 1}, Activation::relu, Activation::identity, rng);
  RowMajor x(state.range(0), 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (auto _ : state) {
    RowMajor out = Parallel ? kernels::parallel::mlp_forward_rows(net, x)
                            : kernels::serial::mlp_forward_rows(net, x);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_MoEObjective<false>)->Name("moe_objective/serial")->Arg(2000)->Arg(20000);
BENCHMARK(BM_MoEObjective<true>)->Name("moe_objective/parallel")->Arg(2000)->Arg(20000);
BENCHMARK(BM_MlpForward<false>)->Name("mlp_forward/serial")->Arg(2000)->Arg(20000);
BENCHMARK(BM_MlpForward<true>)->Name("mlp_forward/parallel")->Arg(2000)->Arg(20000);

BENCHMARK_MAIN();
