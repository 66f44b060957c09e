#include "liitr/kernels/mlp_kernels.hpp"

namespace liitr::kernels {

namespace serial {

RowMajor mlp_forward_rows(const MlpModel& model, const RowMajor& input) {
  RowMajor out(input.rows(), static_cast<Eigen::Index>(model.output_dim()));
  for (Eigen::Index r = 0; r < input.rows(); ++r) {
    const Vector y = forward(model, std::span<const double>(input.row(r).data(),
                                                            static_cast<std::size_t>(input.cols())));
    for (std::size_t c = 0; c < y.size(); ++c) out(r, static_cast<Eigen::Index>(c)) = y[c];
  }
  return out;
}

}  // namespace serial

namespace parallel {

RowMajor mlp_forward_rows(const MlpModel& model, const RowMajor& input) {
  require_shape(static_cast<std::size_t>(input.cols()) == model.input_dim(),
                "mlp_forward_rows: input width mismatch");
  const Eigen::Index n = input.rows();
  RowMajor out(n, static_cast<Eigen::Index>(model.output_dim()));
  const Eigen::Index block = static_cast<Eigen::Index>(kBlockRows);
  const Eigen::Index nblocks = (n + block - 1) / block;
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < nblocks; ++b) {
    const Eigen::Index begin = b * block;
    const Eigen::Index len = std::min(block, n - begin);
    out.middleRows(begin, len) = forward_batch(model, input.middleRows(begin, len));
  }
  return out;
}

}  // namespace parallel

}  // namespace liitr::kernels
