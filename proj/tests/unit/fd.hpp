#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

// Central finite differences over a list of parameter blocks.
namespace fd {

inline std::vector<std::vector<double>> gradient(std::vector<std::span<double>> params,
                                                 const std::function<double()>& loss,
                                                 double h = 1e-6) {
  std::vector<std::vector<double>> out;
  for (auto block : params) {
    std::vector<double> g(block.size());
    for (std::size_t i = 0; i < block.size(); ++i) {
      const double keep = block[i];
      block[i] = keep + h;
      const double up = loss();
      block[i] = keep - h;
      const double down = loss();
      block[i] = keep;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||, floor) over all blocks.
template <class A, class B>
double relative_error(const A& analytic, const B& numeric, double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t b = 0; b < analytic.size(); ++b)
    for (std::size_t i = 0; i < analytic[b].size(); ++i) {
      const double a = analytic[b][i], n = numeric[b][i];
      diff += (a - n) * (a - n);
      na += a * a;
      nb += n * n;
    }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace fd
