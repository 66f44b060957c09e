#pragma once

#include <span>

#include "liitr/moe.hpp"

namespace liitr::kernels {

struct MoEObjectiveArgs {
  const MoEData& data;
  const std::vector<ExpertModel>& experts;
  const GatingModel& gate;
  double lambda = 0.0;
  GateMode mode = GateMode::soft;
  double ste_log_ratio_cap = 20.0;
};

// Both kernels return the penalized log-likelihood summed over `rows` (all rows
// when empty) and, when grad != nullptr, add its gradient into *grad.

namespace serial {
// Reference implementation: one row at a time through forward()/backward().
double moe_objective(const MoEObjectiveArgs& args, std::span<const std::size_t> rows,
                     MoEGradient* grad);
}  // namespace serial

namespace parallel {
// Blocked implementation; blocks of kBlockRows rows run on OpenMP threads and
// their partial sums are reduced in block order.
double moe_objective(const MoEObjectiveArgs& args, std::span<const std::size_t> rows,
                     MoEGradient* grad);
}  // namespace parallel

}  // namespace liitr::kernels
