#include <doctest.h>

#include "liitr/blackbox.hpp"
#include "liitr/numkit/linalg.hpp"
#include "models.hpp"

using namespace liitr;

namespace {

Dataset linear_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    d.x(i, 0) = rng.normal();
    d.x(i, 1) = rng.normal(3.0, 2.0);
    d.t.push_back(rng.bernoulli(0.5));
    d.y.push_back(1.0 + 2.0 * d.x(i, 0) - 0.5 * d.x(i, 1) + 1.5 * d.t.back() + 0.1 * rng.normal());
  }
  return d;
}

BlackboxConfig small_config() {
  BlackboxConfig c;
  c.hidden = {16};
  c.max_epochs = 150;
  c.batch_size = 64;
  c.optimizer.learning_rate = 5e-3;
  return c;
}

}  // namespace

TEST_CASE("fits a noisy linear surface") {
  const Dataset d = linear_data(800, 1);
  const BlackboxModel bb = fit_blackbox(d, small_config());
  CHECK(bb.val_r2 > 0.98);
  CHECK(bb.log.epochs_run > 0);
  CHECK(bb.log.best_epoch < bb.log.epochs_run);
  // The treatment effect is +1.5 everywhere.
  const Vector x{0.3, 2.0};
  Vector d1{1.0, 0.3, 2.0}, d0{0.0, 0.3, 2.0};
  CHECK(predict(bb, d1) - predict(bb, d0) == doctest::Approx(1.5).epsilon(0.1));
  CHECK(blackbox_itr(bb, x) == 1);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const Dataset d = linear_data(300, 2);
  BlackboxConfig c = small_config();
  c.max_epochs = 20;
  const auto a = fit_blackbox(d, c), b = fit_blackbox(d, c);
  CHECK(a.net == b.net);
}

TEST_CASE("batch prediction and JSON round trip agree with single-row prediction") {
  const Dataset d = linear_data(300, 3);
  BlackboxConfig c = small_config();
  c.max_epochs = 10;
  const BlackboxModel bb = fit_blackbox(d, c);
  Matrix rows(5, 3);
  for (std::size_t r = 0; r < 5; ++r) {
    rows(r, 0) = static_cast<double>(r % 2);
    rows(r, 1) = d.x(r, 0);
    rows(r, 2) = d.x(r, 1);
  }
  const Vector batch = predict_batch(bb, rows);
  const BlackboxModel back = blackbox_from_json(json::parse(dump_json(blackbox_to_json(bb))));
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(batch[r] == doctest::Approx(predict(bb, rows.row(r))).epsilon(1e-12));
    CHECK(predict(back, rows.row(r)) == predict(bb, rows.row(r)));
  }
  json wrong = blackbox_to_json(bb);
  wrong["kind"] = "vae";
  CHECK_THROWS_AS(blackbox_from_json(wrong), UsageError);
}

TEST_CASE("ITR ties resolve to control") {
  const BlackboxModel flat = linear_blackbox({0.0, 1.0, 1.0}, 0.0);
  CHECK(blackbox_itr(flat, Vector{0.5, 0.5}) == 0);
  const BlackboxModel helps = linear_blackbox({0.2, 1.0, 1.0}, 0.0);
  CHECK(blackbox_itr(helps, Vector{0.5, 0.5}) == 1);
  const Matrix x = Matrix::from_rows({{0.1, 0.2}, {3.0, -1.0}});
  CHECK(blackbox_itr_batch(helps, x) == std::vector<int>{1, 1});
}

TEST_CASE("too little data is rejected") {
  const Dataset d = linear_data(20, 4);
  CHECK_THROWS(fit_blackbox(d, small_config()));
}
