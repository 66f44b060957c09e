#pragma once

#include <span>
#include <string>
#include <vector>

#include "liitr/numkit/matrix.hpp"
#include "liitr/numkit/rng.hpp"

namespace liitr {

enum class Activation { relu, tanh, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Feed-forward network. Layer i maps layer_sizes[i] -> layer_sizes[i+1] and
// applies activations[i]; weights[i] is (out x in).
struct MlpModel {
  std::vector<std::size_t> layer_sizes;
  std::vector<Activation> activations;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  // He-uniform for relu layers, Xavier-uniform otherwise; zero biases.
  static MlpModel create(std::vector<std::size_t> sizes, Activation hidden,
                         Activation output, Rng& rng);

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t parameter_count() const;

  // Throws ShapeError when shapes do not chain.
  void validate() const;

  // W0, b0, W1, b1, ... in that order.
  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static MlpGradients zeros_like(const MlpModel& model);
  void set_zero();
  void scale(double s);
  void add(const MlpGradients& other);
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
};

struct MlpBackward {
  MlpGradients grads;
  Vector input_grad;
};

// Per-sample activations recorded by forward() for a later backward().
class MlpCache {
 public:
  bool valid_for(const MlpModel& model, std::span<const double> input) const;

 private:
  friend Vector forward(const MlpModel&, std::span<const double>, MlpCache&);
  friend MlpBackward backward(const MlpModel&, const MlpCache&, std::span<const double>,
                              std::span<const double>);
  const MlpModel* model_ = nullptr;
  Vector input_;
  std::vector<Vector> pre_;   // pre-activation per layer
  std::vector<Vector> post_;  // post_[0] = input, post_[i+1] = act(pre_[i])
};

Vector forward(const MlpModel& model, std::span<const double> input);
Vector forward(const MlpModel& model, std::span<const double> input, MlpCache& cache);

// Gradients of <output_grad, forward(input)>. Requires the cache to have been
// filled by forward() on the same model and input; throws UsageError otherwise.
MlpBackward backward(const MlpModel& model, const MlpCache& cache,
                     std::span<const double> input, std::span<const double> output_grad);

// Batched variants: rows of `input` are samples.
struct MlpBatchCache {
  std::vector<RowMajor> pre;
  std::vector<RowMajor> post;
};

RowMajor forward_batch(const MlpModel& model, const Eigen::Ref<const RowMajor>& input,
                       MlpBatchCache* cache = nullptr);

// Accumulates parameter gradients into `accum`; writes d/d(input) when requested.
void backward_batch(const MlpModel& model, const MlpBatchCache& cache,
                    const Eigen::Ref<const RowMajor>& output_grad, MlpGradients& accum,
                    RowMajor* input_grad = nullptr);

}  // namespace liitr
