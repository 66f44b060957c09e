#pragma once

#include "liitr/numkit/mlp.hpp"

namespace liitr::kernels {

// Rows per work block. Fixed so that block-wise reductions sum in the same
// order regardless of the thread count.
inline constexpr std::size_t kBlockRows = 512;

namespace serial {
// Reference: one forward() per row.
RowMajor mlp_forward_rows(const MlpModel& model, const RowMajor& input);
}  // namespace serial

namespace parallel {
// Blocked GEMM forward, blocks distributed over OpenMP threads.
RowMajor mlp_forward_rows(const MlpModel& model, const RowMajor& input);
}  // namespace parallel

}  // namespace liitr::kernels
