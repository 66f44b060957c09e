#pragma once

#include <cstdint>
#include <span>

#include "liitr/numkit/adamw.hpp"
#include "liitr/numkit/mlp.hpp"
#include "liitr/numkit/scaler.hpp"
#include "liitr/numkit/serialize.hpp"
#include "liitr/simgen.hpp"

namespace liitr {

struct BlackboxConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t max_epochs = 400;
  std::size_t patience = 30;
  std::size_t batch_size = 256;
  double val_fraction = 0.15;
  AdamWConfig optimizer{};
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainingLog {
  std::vector<double> train_mse;  // standardized target units
  std::vector<double> val_mse;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

// f(D; theta) with D = (T, X). T enters raw; X and Y are standardized.
struct BlackboxModel {
  MlpModel net;
  Scaler input_scaler;   // over the p covariates
  Scaler target_scaler;  // one column
  TrainingLog log;
  double train_r2 = 0.0;
  double val_r2 = 0.0;
  std::uint64_t seed = 0;

  std::size_t p() const { return input_scaler.dim(); }
};

BlackboxModel fit_blackbox(const Dataset& data, const BlackboxConfig& config);

// d_row = (t, x_1..x_p); result in outcome units.
double predict(const BlackboxModel& model, std::span<const double> d_row);

// Rows of d are (t, x_1..x_p).
Vector predict_batch(const BlackboxModel& model, const Matrix& d);

// argmax_t predict((t, x_row)); ties resolve to 0.
int blackbox_itr(const BlackboxModel& model, std::span<const double> x_row);
std::vector<int> blackbox_itr_batch(const BlackboxModel& model, const Matrix& x);

json blackbox_to_json(const BlackboxModel& model, const json& config = json::object());
BlackboxModel blackbox_from_json(const json& j);

}  // namespace liitr
