#pragma once

// Feed-forward network numerics: batched forward pass, reverse-mode
// gradients, the input-gradient penalty and Adam. Batches are stored
// column-wise: a batch of B inputs of width d is a d x B matrix.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bsd/error.hpp"

namespace bsd {

enum class Activation { relu, linear };

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weights;  // out x in
  VectorX<Scalar> bias;     // out
  Activation activation = Activation::linear;

  Eigen::Index in() const { return weights.cols(); }
  Eigen::Index out() const { return weights.rows(); }
};

template <typename Scalar>
struct Mlp {
  std::vector<DenseLayer<Scalar>> layers;

  Eigen::Index input_width() const { return layers.empty() ? 0 : layers.front().in(); }
  Eigen::Index output_width() const { return layers.empty() ? 0 : layers.back().out(); }

  // Layer widths chain and every bias matches its weight rows.
  void validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      if (layer.bias.size() != layer.out())
        throw ShapeError("layer " + std::to_string(l) + ": bias length " +
                         std::to_string(layer.bias.size()) + " != " +
                         std::to_string(layer.out()));
      if (l > 0 && layer.in() != layers[l - 1].out())
        throw ShapeError("layer " + std::to_string(l) + ": input width " +
                         std::to_string(layer.in()) + " does not chain to " +
                         std::to_string(layers[l - 1].out()));
    }
  }
};

using MlpParams = Mlp<double>;

template <typename Scalar>
struct LayerGrad {
  MatrixX<Scalar> weights;
  VectorX<Scalar> bias;
};

// Per-parameter partials mirroring an Mlp, plus the input gradient (one
// column per batch column) when the producing operation computes it.
template <typename Scalar>
struct Gradients {
  std::vector<LayerGrad<Scalar>> layers;
  MatrixX<Scalar> input;

  static Gradients zeros_like(const Mlp<Scalar>& net) {
    Gradients g;
    g.layers.reserve(net.layers.size());
    for (const auto& layer : net.layers)
      g.layers.push_back({MatrixX<Scalar>::Zero(layer.out(), layer.in()),
                          VectorX<Scalar>::Zero(layer.out())});
    return g;
  }

  Gradients& operator+=(const Gradients& other) {
    if (other.layers.size() != layers.size()) throw ShapeError("gradient layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].weights += other.layers[l].weights;
      layers[l].bias += other.layers[l].bias;
    }
    return *this;
  }

  Gradients& operator*=(Scalar s) {
    for (auto& layer : layers) {
      layer.weights *= s;
      layer.bias *= s;
    }
    input *= s;
    return *this;
  }

  bool all_finite() const {
    for (const auto& layer : layers)
      if (!layer.weights.allFinite() || !layer.bias.allFinite()) return false;
    return input.allFinite();
  }
};

// Pre-activations per layer and post-activations with post[0] = input.
template <typename Scalar>
struct ForwardCache {
  std::vector<MatrixX<Scalar>> pre;
  std::vector<MatrixX<Scalar>> post;
};

// Glorot-uniform weights, zero biases; relu on hidden layers, linear output.
template <typename Scalar, typename Rng>
Mlp<Scalar> make_mlp(std::span<const int> widths, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("need at least input and output widths");
  Mlp<Scalar> net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    if (in < 1 || out < 1) throw ShapeError("layer widths must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer<Scalar> layer;
    layer.weights.resize(out, in);
    // Column-major fill order; fixed so seeds reproduce across builds.
    for (Eigen::Index j = 0; j < in; ++j)
      for (Eigen::Index i = 0; i < out; ++i) layer.weights(i, j) = static_cast<Scalar>(dist(rng));
    layer.bias = VectorX<Scalar>::Zero(out);
    layer.activation = (l + 2 == widths.size()) ? Activation::linear : Activation::relu;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

template <typename Scalar>
Mlp<Scalar> zeros_like(const Mlp<Scalar>& net) {
  Mlp<Scalar> z = net;
  for (auto& layer : z.layers) {
    layer.weights.setZero();
    layer.bias.setZero();
  }
  return z;
}

namespace detail {

template <typename Derived>
auto relu_mask(const Eigen::MatrixBase<Derived>& pre) {
  using Scalar = typename Derived::Scalar;
  return (pre.array() > Scalar(0)).template cast<Scalar>().matrix();
}

}  // namespace detail

template <typename Scalar>
MatrixX<Scalar> forward(const Mlp<Scalar>& net, const std::type_identity_t<MatrixX<Scalar>>& x,
                        ForwardCache<Scalar>* cache = nullptr) {
  if (net.layers.empty()) throw ShapeError("network has no layers");
  if (x.rows() != net.input_width())
    throw ShapeError("input width " + std::to_string(x.rows()) + " != network input width " +
                     std::to_string(net.input_width()));
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->post.push_back(x);
  }
  MatrixX<Scalar> a = x;
  for (const auto& layer : net.layers) {
    MatrixX<Scalar> z = layer.weights * a;
    z.colwise() += layer.bias;
    a = layer.activation == Activation::relu ? MatrixX<Scalar>(z.cwiseMax(Scalar(0))) : z;
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
  }
  return a;
}

template <typename Scalar>
VectorX<Scalar> forward(const Mlp<Scalar>& net, const VectorX<Scalar>& x,
                        ForwardCache<Scalar>* cache = nullptr) {
  return forward(net, MatrixX<Scalar>(x), cache);
}

// Gradients of sum_columns(upstream . output) with respect to every parameter
// and to each input column.
template <typename Scalar>
Gradients<Scalar> backward(const Mlp<Scalar>& net, const ForwardCache<Scalar>& cache,
                           const std::type_identity_t<MatrixX<Scalar>>& upstream) {
  const std::size_t L = net.layers.size();
  if (cache.pre.size() != L || cache.post.size() != L + 1)
    throw ShapeError("cache does not match network depth");
  for (std::size_t l = 0; l < L; ++l)
    if (cache.pre[l].rows() != net.layers[l].out() || cache.post[l].rows() != net.layers[l].in())
      throw ShapeError("stale cache: layer " + std::to_string(l) + " shape mismatch");
  if (upstream.rows() != net.output_width() || upstream.cols() != cache.pre.back().cols())
    throw ShapeError("upstream shape does not match network output");

  Gradients<Scalar> grads;
  grads.layers.resize(L);
  MatrixX<Scalar> delta = upstream;
  for (std::size_t k = L; k-- > 0;) {
    const auto& layer = net.layers[k];
    if (layer.activation == Activation::relu)
      delta = delta.cwiseProduct(detail::relu_mask(cache.pre[k]));
    grads.layers[k].weights = delta * cache.post[k].transpose();
    grads.layers[k].bias = delta.rowwise().sum();
    delta = layer.weights.transpose() * delta;
  }
  grads.input = std::move(delta);
  return grads;
}

template <typename Scalar>
struct PenaltyResult {
  VectorX<Scalar> penalties;   // one per column
  VectorX<Scalar> grad_norms;  // ||d f / d x|| per column
  Gradients<Scalar> grads;     // of the summed penalties
};

// Penalty lambda * (||grad_x f(x)||_2 - 1)^2 for a scalar-output network,
// evaluated per column, with parameter gradients of the summed penalty.
// The relu masks of the forward pass are held fixed, so the input gradient
// is a linear chain in the weights and bias partials vanish. At a zero input
// gradient the norm's subgradient is taken as 0.
template <typename Scalar>
PenaltyResult<Scalar> gradient_penalty(const Mlp<Scalar>& disc,
                                       const std::type_identity_t<MatrixX<Scalar>>& points,
                                       Scalar lambda) {
  if (disc.output_width() != 1) throw ShapeError("gradient penalty needs a scalar-output network");
  const std::size_t L = disc.layers.size();
  const Eigen::Index batch = points.cols();

  ForwardCache<Scalar> cache;
  forward(disc, points, &cache);

  std::vector<MatrixX<Scalar>> masks(L);
  for (std::size_t l = 0; l < L; ++l)
    masks[l] = disc.layers[l].activation == Activation::relu
                   ? MatrixX<Scalar>(detail::relu_mask(cache.pre[l]))
                   : MatrixX<Scalar>::Ones(disc.layers[l].out(), batch);

  // Backward chain with unit upstream: g[l] is d f / d pre[l].
  std::vector<MatrixX<Scalar>> g(L);
  MatrixX<Scalar> e = MatrixX<Scalar>::Ones(1, batch);
  for (std::size_t k = L; k-- > 0;) {
    g[k] = e.cwiseProduct(masks[k]);
    e = disc.layers[k].weights.transpose() * g[k];
  }

  PenaltyResult<Scalar> result;
  result.grad_norms = e.colwise().norm().transpose();
  result.penalties.resize(batch);
  MatrixX<Scalar> r(e.rows(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Scalar norm = result.grad_norms(b);
    const Scalar gap = norm - Scalar(1);
    result.penalties(b) = lambda * gap * gap;
    if (norm > Scalar(0))
      r.col(b) = (Scalar(2) * lambda * gap / norm) * e.col(b);
    else
      r.col(b).setZero();
  }

  // Forward-propagate d P / d e through the frozen-mask linear chain.
  result.grads = Gradients<Scalar>::zeros_like(disc);
  for (std::size_t l = 0; l < L; ++l) {
    result.grads.layers[l].weights = g[l] * r.transpose();
    r = (disc.layers[l].weights * r).cwiseProduct(masks[l]);
  }
  result.grads.input = MatrixX<Scalar>::Zero(points.rows(), 0);
  return result;
}

template <typename Scalar>
struct AdamState {
  Gradients<Scalar> m;
  Gradients<Scalar> v;
  std::int64_t step = 0;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);

  static AdamState for_params(const Mlp<Scalar>& net) {
    AdamState s;
    s.m = Gradients<Scalar>::zeros_like(net);
    s.v = Gradients<Scalar>::zeros_like(net);
    return s;
  }
};

// Bias-corrected Adam update. Rejects non-finite gradients before touching
// either the parameters or the state.
template <typename Scalar>
void adam_step(Mlp<Scalar>& params, const Gradients<Scalar>& grads, AdamState<Scalar>& state,
               Scalar learning_rate) {
  if (!(learning_rate >= Scalar(0))) throw ShapeError("learning rate must be >= 0");
  if (grads.layers.size() != params.layers.size() ||
      state.m.layers.size() != params.layers.size() ||
      state.v.layers.size() != params.layers.size())
    throw ShapeError("adam: layer count mismatch");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& p = params.layers[l];
    const auto& gl = grads.layers[l];
    if (gl.weights.rows() != p.out() || gl.weights.cols() != p.in() || gl.bias.size() != p.out() ||
        state.m.layers[l].weights.rows() != p.out() || state.m.layers[l].weights.cols() != p.in())
      throw ShapeError("adam: shape mismatch at layer " + std::to_string(l));
    if (!gl.weights.allFinite() || !gl.bias.allFinite())
      throw NumericalError("adam: non-finite gradient at layer " + std::to_string(l));
  }

  ++state.step;
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, static_cast<Scalar>(state.step));
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, static_cast<Scalar>(state.step));
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = state.beta1 * m + (Scalar(1) - state.beta1) * grad;
    v = state.beta2 * v + (Scalar(1) - state.beta2) * grad.cwiseAbs2();
    param.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weights, grads.layers[l].weights, state.m.layers[l].weights,
           state.v.layers[l].weights);
    update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias,
           state.v.layers[l].bias);
  }
}

}  // namespace bsd
