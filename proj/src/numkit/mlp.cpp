#include "liitr/numkit/mlp.hpp"

#include <algorithm>
#include <cmath>

namespace liitr {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

namespace {

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

// Derivative expressed through pre-activation x and post-activation y.
inline double activate_grad(Activation a, double x, double y) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

void apply_inplace(Activation a, RowMajor& m) {
  switch (a) {
    case Activation::relu: m = m.cwiseMax(0.0); break;
    case Activation::tanh: m = m.array().tanh().matrix(); break;
    case Activation::identity: break;
  }
}

}  // namespace

MlpModel MlpModel::create(std::vector<std::size_t> sizes, Activation hidden, Activation output,
                          Rng& rng) {
  if (sizes.size() < 2) throw ShapeError("an MLP needs at least input and output sizes");
  MlpModel m;
  m.layer_sizes = std::move(sizes);
  const std::size_t L = m.layer_sizes.size() - 1;
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t in = m.layer_sizes[i], out = m.layer_sizes[i + 1];
    if (in == 0 || out == 0) throw ShapeError("zero-width layer");
    const Activation act = (i + 1 == L) ? output : hidden;
    const double limit = act == Activation::relu
                             ? std::sqrt(6.0 / static_cast<double>(in))
                             : std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(out, in);
    for (double& v : w.data()) v = rng.uniform(-limit, limit);
    m.activations.push_back(act);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(out, 0.0);
  }
  return m;
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
  return n;
}

void MlpModel::validate() const {
  require_shape(layer_sizes.size() >= 2, "MLP needs at least two layer sizes");
  const std::size_t L = layer_sizes.size() - 1;
  require_shape(weights.size() == L && biases.size() == L && activations.size() == L,
                "MLP layer lists have inconsistent lengths");
  for (std::size_t i = 0; i < L; ++i) {
    require_shape(weights[i].rows() == layer_sizes[i + 1] && weights[i].cols() == layer_sizes[i],
                  "weight " + std::to_string(i) + " does not map " +
                      std::to_string(layer_sizes[i]) + "->" + std::to_string(layer_sizes[i + 1]));
    require_shape(biases[i].size() == layer_sizes[i + 1],
                  "bias " + std::to_string(i) + " has wrong length");
  }
}

std::vector<std::span<double>> MlpModel::parameter_blocks() {
  std::vector<std::span<double>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i].data());
    out.push_back(biases[i]);
  }
  return out;
}

std::vector<std::span<const double>> MlpModel::parameter_blocks() const {
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i].data());
    out.push_back(biases[i]);
  }
  return out;
}

MlpGradients MlpGradients::zeros_like(const MlpModel& model) {
  MlpGradients g;
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    g.weights.emplace_back(model.weights[i].rows(), model.weights[i].cols());
    g.biases.emplace_back(model.biases[i].size(), 0.0);
  }
  return g;
}

void MlpGradients::set_zero() {
  for (auto& w : weights) std::fill(w.data().begin(), w.data().end(), 0.0);
  for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
}

void MlpGradients::scale(double s) {
  for (auto& w : weights)
    for (double& v : w.data()) v *= s;
  for (auto& b : biases)
    for (double& v : b) v *= s;
}

void MlpGradients::add(const MlpGradients& other) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i].eigen() += other.weights[i].eigen();
    for (std::size_t j = 0; j < biases[i].size(); ++j) biases[i][j] += other.biases[i][j];
  }
}

std::vector<std::span<double>> MlpGradients::blocks() {
  std::vector<std::span<double>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i].data());
    out.push_back(biases[i]);
  }
  return out;
}

std::vector<std::span<const double>> MlpGradients::blocks() const {
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i].data());
    out.push_back(biases[i]);
  }
  return out;
}

bool MlpCache::valid_for(const MlpModel& model, std::span<const double> input) const {
  return model_ == &model && input_.size() == input.size() &&
         std::equal(input_.begin(), input_.end(), input.begin());
}

Vector forward(const MlpModel& model, std::span<const double> input) {
  MlpCache scratch;
  return forward(model, input, scratch);
}

Vector forward(const MlpModel& model, std::span<const double> input, MlpCache& cache) {
  require_shape(input.size() == model.input_dim(),
                "forward: input length " + std::to_string(input.size()) + " != " +
                    std::to_string(model.input_dim()));
  const std::size_t L = model.num_layers();
  cache.model_ = &model;
  cache.input_.assign(input.begin(), input.end());
  cache.pre_.resize(L);
  cache.post_.resize(L + 1);
  cache.post_[0] = cache.input_;
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix& w = model.weights[l];
    const Vector& x = cache.post_[l];
    Vector& z = cache.pre_[l];
    Vector& y = cache.post_[l + 1];
    z.assign(w.rows(), 0.0);
    y.resize(w.rows());
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double acc = model.biases[l][r];
      auto wr = w.row(r);
      for (std::size_t c = 0; c < w.cols(); ++c) acc += wr[c] * x[c];
      z[r] = acc;
      y[r] = activate(model.activations[l], acc);
    }
  }
  return cache.post_[L];
}

MlpBackward backward(const MlpModel& model, const MlpCache& cache, std::span<const double> input,
                     std::span<const double> output_grad) {
  if (!cache.valid_for(model, input))
    throw UsageError("backward: cache was not filled by forward() on this model and input");
  require_shape(output_grad.size() == model.output_dim(), "backward: output_grad length mismatch");
  const std::size_t L = model.num_layers();
  MlpBackward out{MlpGradients::zeros_like(model), {}};
  Vector delta(output_grad.begin(), output_grad.end());
  for (std::size_t l = L; l-- > 0;) {
    const Vector& z = cache.pre_[l];
    const Vector& y = cache.post_[l + 1];
    const Vector& x = cache.post_[l];
    for (std::size_t r = 0; r < delta.size(); ++r)
      delta[r] *= activate_grad(model.activations[l], z[r], y[r]);
    Matrix& gw = out.grads.weights[l];
    for (std::size_t r = 0; r < gw.rows(); ++r) {
      out.grads.biases[l][r] = delta[r];
      for (std::size_t c = 0; c < gw.cols(); ++c) gw(r, c) = delta[r] * x[c];
    }
    const Matrix& w = model.weights[l];
    Vector prev(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) prev[c] += w(r, c) * delta[r];
    delta = std::move(prev);
  }
  out.input_grad = std::move(delta);
  return out;
}

RowMajor forward_batch(const MlpModel& model, const Eigen::Ref<const RowMajor>& input,
                       MlpBatchCache* cache) {
  require_shape(static_cast<std::size_t>(input.cols()) == model.input_dim(),
                "forward_batch: input width mismatch");
  const std::size_t L = model.num_layers();
  if (cache) {
    cache->pre.resize(L);
    cache->post.resize(L + 1);
    cache->post[0] = input;
  }
  RowMajor x = input;
  for (std::size_t l = 0; l < L; ++l) {
    const auto w = model.weights[l].eigen();
    const Eigen::Map<const Eigen::RowVectorXd> b(model.biases[l].data(),
                                                 static_cast<Eigen::Index>(model.biases[l].size()));
    RowMajor z = x * w.transpose();
    z.rowwise() += b;
    if (cache) cache->pre[l] = z;
    apply_inplace(model.activations[l], z);
    if (cache) cache->post[l + 1] = z;
    x = std::move(z);
  }
  return x;
}

void backward_batch(const MlpModel& model, const MlpBatchCache& cache,
                    const Eigen::Ref<const RowMajor>& output_grad, MlpGradients& accum,
                    RowMajor* input_grad) {
  const std::size_t L = model.num_layers();
  if (cache.pre.size() != L || cache.post.size() != L + 1)
    throw UsageError("backward_batch: cache was not filled by forward_batch()");
  require_shape(output_grad.rows() == cache.post[0].rows() &&
                    static_cast<std::size_t>(output_grad.cols()) == model.output_dim(),
                "backward_batch: output_grad shape mismatch");
  RowMajor delta = output_grad;
  for (std::size_t l = L; l-- > 0;) {
    switch (model.activations[l]) {
      case Activation::relu:
        delta = (cache.pre[l].array() > 0.0).select(delta, 0.0);
        break;
      case Activation::tanh:
        delta.array() *= (1.0 - cache.post[l + 1].array().square());
        break;
      case Activation::identity:
        break;
    }
    accum.weights[l].eigen().noalias() += delta.transpose() * cache.post[l];
    const Eigen::RowVectorXd db = delta.colwise().sum();
    for (std::size_t r = 0; r < accum.biases[l].size(); ++r)
      accum.biases[l][r] += db(static_cast<Eigen::Index>(r));
    if (l > 0 || input_grad) {
      RowMajor prev = delta * model.weights[l].eigen();
      delta = std::move(prev);
    }
  }
  if (input_grad) *input_grad = std::move(delta);
}

}  // namespace liitr
