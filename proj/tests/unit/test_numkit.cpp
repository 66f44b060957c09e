#include <doctest.h>

#include <cmath>
#include <limits>

#include "fd.hpp"
#include "liitr/kernels/mlp_kernels.hpp"
#include "liitr/numkit/adamw.hpp"
#include "liitr/numkit/linalg.hpp"
#include "liitr/numkit/mlp.hpp"
#include "liitr/numkit/rng.hpp"
#include "liitr/numkit/scaler.hpp"
#include "liitr/numkit/serialize.hpp"

using namespace liitr;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

// Mean squared error over rows and its parameter gradient via per-row backward().
double mse(const MlpModel& net, const Matrix& x, const Vector& y, MlpGradients* grad) {
  double loss = 0.0;
  const double b = static_cast<double>(x.rows());
  MlpCache cache;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Vector out = forward(net, x.row(r), cache);
    const double e = out[0] - y[r];
    loss += e * e / b;
    if (grad) {
      const double g = 2.0 * e / b;
      grad->add(backward(net, cache, x.row(r), std::span<const double>(&g, 1)).grads);
    }
  }
  return loss;
}

}  // namespace

TEST_SUITE("matrix") {
  TEST_CASE("from_rows, slicing and selection") {
    const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    CHECK(m.rows() == 3);
    CHECK(m(2, 1) == 6);
    CHECK(m.slice_rows(1, 3) == Matrix::from_rows({{3, 4}, {5, 6}}));
    const std::vector<std::size_t> idx{2, 0};
    CHECK(m.select_rows(idx) == Matrix::from_rows({{5, 6}, {1, 2}}));
    CHECK(m.column(0) == Vector{1, 3, 5});
    CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), ShapeError);
  }
}

TEST_SUITE("rng") {
  TEST_CASE("same seed, same stream; labels separate streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    Rng c1 = Rng(42).child("perturb:7");
    Rng c2 = Rng(42).child("perturb:7");
    Rng c3 = Rng(42).child("perturb:8");
    const double v1 = c1.uniform(), v2 = c2.uniform(), v3 = c3.uniform();
    CHECK(v1 == v2);
    CHECK(v1 != v3);
  }

  TEST_CASE("child streams ignore the parent's draw position") {
    Rng parent(9);
    const double before = parent.child("x").uniform();
    for (int i = 0; i < 10; ++i) parent.uniform();
    CHECK(parent.child("x").uniform() == before);
  }

  TEST_CASE("shuffle is a permutation") {
    Rng rng(3);
    std::vector<std::size_t> v(50);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    rng.shuffle(v);
    std::vector<std::size_t> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(sorted[i] == i);
  }
}

TEST_SUITE("scaler") {
  TEST_CASE("population sd, clamped constant column, round trip") {
    const Matrix x = Matrix::from_rows({{1, 5}, {3, 5}, {5, 5}, {7, 5}});
    const Scaler s = Scaler::fit(x);
    CHECK(s.mean[0] == doctest::Approx(4.0));
    CHECK(s.sd[0] == doctest::Approx(std::sqrt(5.0)));
    CHECK(s.sd[1] == 1.0);
    CHECK(s.clamped[1]);
    CHECK(s.any_clamped());
    const Matrix back = s.inverse(s.transform(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == doctest::Approx(x.data()[i]));
  }
}

TEST_SUITE("linalg") {
  TEST_CASE("noise-free least squares recovers coefficients") {
    Rng rng(1);
    const Matrix x = random_matrix(50, 3, rng);
    Vector y(50);
    for (std::size_t r = 0; r < 50; ++r) y[r] = 1.5 * x(r, 0) - 2.0 * x(r, 1) + 0.25 * x(r, 2);
    const auto fit = least_squares(x, y);
    CHECK(fit.coef[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(fit.coef[1] == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(fit.coef[2] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(fit.rank == 3);
    CHECK_FALSE(fit.ridge_used);
  }

  TEST_CASE("weight 2 equals a duplicated row") {
    Rng rng(2);
    const Matrix x = random_matrix(20, 2, rng);
    Vector y(20), w(20, 1.0);
    for (double& v : y) v = rng.normal();
    w[3] = 2.0;
    std::vector<Vector> rows;
    Vector ydup;
    for (std::size_t r = 0; r < 20; ++r) {
      rows.push_back(x.row_vector(r));
      ydup.push_back(y[r]);
    }
    rows.push_back(x.row_vector(3));
    ydup.push_back(y[3]);
    const auto a = least_squares(x, y, w);
    const auto b = least_squares(Matrix::from_rows(rows), ydup);
    CHECK(a.coef[0] == doctest::Approx(b.coef[0]).epsilon(1e-12));
    CHECK(a.coef[1] == doctest::Approx(b.coef[1]).epsilon(1e-12));
  }

  TEST_CASE("rank-deficient design falls back to ridge") {
    const Matrix x = Matrix::from_rows({{1, 2}, {2, 4}, {3, 6}, {4, 8}});
    const Vector y{1, 2, 3, 4};
    const auto fit = least_squares(x, y);
    CHECK(fit.ridge_used);
    CHECK(fit.rank == 1);
    CHECK(fit.coef[0] + 2.0 * fit.coef[1] == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("diagonal of the inverse Gram matrix") {
    // X'X = [[3, 1], [1, 1]], inverse = [[1, -1], [-1, 3]] / 2
    const Vector d = gram_inverse_diagonal(Matrix::from_rows({{1, 1}, {1, 0}, {1, 0}}), 0.0);
    CHECK(d[0] == doctest::Approx(0.5));
    CHECK(d[1] == doctest::Approx(1.5));
    // Orthogonal columns: X'X = diag(3, 2)
    const Vector e = gram_inverse_diagonal(Matrix::from_rows({{1, 0}, {1, 1}, {1, -1}, {0, 0}}), 0.0);
    CHECK(e[0] == doctest::Approx(1.0 / 3.0));
    CHECK(e[1] == doctest::Approx(0.5));
  }

  TEST_CASE("summary statistics") {
    CHECK(median({3, 1, 2}) == 2.0);
    CHECK(median({4, 1, 3, 2}) == 2.5);
    const Vector t{1, 2, 3, 4};
    CHECK(r_squared(t, t) == 1.0);
    CHECK(r_squared(t, Vector(4, 2.5)) == doctest::Approx(0.0));
    CHECK(pearson(t, Vector{2, 4, 6, 8}) == doctest::Approx(1.0));
    CHECK(variance(t) == doctest::Approx(1.25));
  }
}

TEST_SUITE("adamw") {
  TEST_CASE("first step moves by about lr against the gradient sign") {
    Vector p{0.0, 0.0};
    Vector g{3.0, -0.2};
    AdamWState st(AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
    std::vector<std::span<double>> params{p};
    std::vector<std::span<const double>> grads{g};
    adamw_step(params, grads, st);
    CHECK(st.step == 1);
    CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-6));
  }

  TEST_CASE("decoupled decay with zero gradient shrinks by 1 - lr*wd") {
    Vector p{2.0};
    Vector g{0.0};
    AdamWState st(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
    std::vector<std::span<double>> params{p};
    std::vector<std::span<const double>> grads{g};
    adamw_step(params, grads, st);
    CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-14));
  }

  TEST_CASE("non-finite gradient is rejected before any update") {
    Vector p1{1.0}, p2{2.0};
    Vector g1{0.5}, g2{std::numeric_limits<double>::quiet_NaN()};
    AdamWState st;
    std::vector<std::span<double>> params{p1, p2};
    std::vector<std::span<const double>> grads{g1, g2};
    CHECK_THROWS_AS(adamw_step(params, grads, st), TrainingError);
    CHECK(p1[0] == 1.0);
    CHECK(p2[0] == 2.0);
    CHECK(st.step == 0);
  }
}

TEST_SUITE("mlp") {
  TEST_CASE("MSE gradient matches central differences on 20 random networks") {
    Rng rng(11);
    for (int inst = 0; inst < 20; ++inst) {
      const Activation act = inst % 2 ? Activation::tanh : Activation::relu;
      const std::size_t in = 2 + rng.index(4), hidden = 3 + rng.index(6);
      MlpModel net = MlpModel::create({in, hidden, hidden, 1}, act, Activation::identity, rng);
      for (auto block : net.parameter_blocks())
        for (double& v : block) v += 0.1 * rng.normal();  // non-zero biases
      const Matrix x = random_matrix(8, in, rng);
      Vector y(8);
      for (double& v : y) v = rng.normal();
      MlpGradients grad = MlpGradients::zeros_like(net);
      mse(net, x, y, &grad);
      const auto numeric = fd::gradient(net.parameter_blocks(), [&] { return mse(net, x, y, nullptr); });
      const auto analytic = grad.blocks();
      const double err = fd::relative_error(analytic, numeric);
      INFO("instance " << inst << " rel err " << err);
      CHECK(err < 1e-4);
    }
  }

  TEST_CASE("backward refuses a cache from another input") {
    Rng rng(5);
    const MlpModel net = MlpModel::create({2, 3, 1}, Activation::relu, Activation::identity, rng);
    MlpCache cache;
    const Vector a{1.0, 2.0}, b{1.0, 2.5}, g{1.0};
    forward(net, a, cache);
    CHECK_NOTHROW(backward(net, cache, a, g));
    CHECK_THROWS_AS(backward(net, cache, b, g), UsageError);
    MlpCache empty;
    CHECK_THROWS_AS(backward(net, empty, a, g), UsageError);
  }

  TEST_CASE("batched forward/backward agree with the per-row path") {
    Rng rng(6);
    const MlpModel net = MlpModel::create({3, 5, 2}, Activation::tanh, Activation::identity, rng);
    const Matrix x = random_matrix(7, 3, rng);
    const RowMajor input = x.eigen();
    MlpBatchCache bc;
    const RowMajor out = forward_batch(net, input, &bc);
    RowMajor og = RowMajor::Ones(7, 2);
    MlpGradients batch = MlpGradients::zeros_like(net), rows = MlpGradients::zeros_like(net);
    backward_batch(net, bc, og, batch);
    MlpCache cache;
    const Vector ones{1.0, 1.0};
    for (std::size_t r = 0; r < 7; ++r) {
      const Vector o = forward(net, x.row(r), cache);
      CHECK(o[0] == doctest::Approx(out(static_cast<Eigen::Index>(r), 0)).epsilon(1e-12));
      rows.add(backward(net, cache, x.row(r), ones).grads);
    }
    CHECK(fd::relative_error(batch.blocks(), rows.blocks()) < 1e-12);
  }

  TEST_CASE("JSON round trip is value exact") {
    Rng rng(8);
    const MlpModel net = MlpModel::create({4, 6, 1}, Activation::relu, Activation::identity, rng);
    const json j = json::parse(dump_json(mlp_to_json(net)));
    CHECK(mlp_from_json(j) == net);
    Scaler s = Scaler::fit(random_matrix(10, 3, rng));
    CHECK(scaler_from_json(json::parse(dump_json(scaler_to_json(s)))) == s);
  }

  TEST_CASE("malformed network JSON is a shape error") {
    Rng rng(8);
    json j = mlp_to_json(MlpModel::create({2, 2, 1}, Activation::relu, Activation::identity, rng));
    j["layer_sizes"] = {2, 3, 1};
    CHECK_THROWS(mlp_from_json(j));
  }
}

TEST_SUITE("mlp kernels") {
  TEST_CASE("serial and parallel forward agree and are deterministic") {
    Rng rng(12);
    const MlpModel net = MlpModel::create({5, 16, 16, 1}, Activation::relu, Activation::identity, rng);
    const Matrix x = random_matrix(1300, 5, rng);
    const RowMajor input = x.eigen();
    const RowMajor a = kernels::serial::mlp_forward_rows(net, input);
    const RowMajor b = kernels::parallel::mlp_forward_rows(net, input);
    const RowMajor c = kernels::parallel::mlp_forward_rows(net, input);
    CHECK((b.array() == c.array()).all());
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
}
