#pragma once

// Small dense feed-forward networks with hand-written reverse mode and Adam.
// Activations are stored column-wise: one column per sample in a batch.

#include "dkoia/core.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace dkoia {

/// Non-owning handle on a trainable parameter block.
struct ParamRef {
  std::string name;
  double* data = nullptr;
  Index rows = 0;
  Index cols = 0;
  bool decay = false;  // included in the L2 penalty

  Eigen::Map<Matrix> map() const { return Eigen::Map<Matrix>(data, rows, cols); }
  Index size() const { return rows * cols; }
};

/// One matrix per ParamRef, same order and shape.
using ParameterGradient = std::vector<Matrix>;

inline ParameterGradient zero_gradient(const std::vector<ParamRef>& params) {
  ParameterGradient g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(Matrix::Zero(p.rows, p.cols));
  return g;
}

/// ReLU hidden layers, identity output layer.
struct LiftingNetwork {
  std::vector<Matrix> weights;  // weights[i]: sizes[i+1] x sizes[i]
  std::vector<Vector> biases;

  static LiftingNetwork zeros(const std::vector<Index>& sizes) {
    if (sizes.size() < 2) throw ShapeError("network needs at least an input and an output layer");
    LiftingNetwork net;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      if (sizes[i] < 1 || sizes[i + 1] < 1) throw ShapeError("network layer sizes must be positive");
      net.weights.push_back(Matrix::Zero(sizes[i + 1], sizes[i]));
      net.biases.push_back(Vector::Zero(sizes[i + 1]));
    }
    return net;
  }

  /// He-style uniform init: W ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), b = 0.
  static LiftingNetwork he_uniform(const std::vector<Index>& sizes, std::mt19937_64& rng) {
    LiftingNetwork net = zeros(sizes);
    for (auto& w : net.weights) {
      const double limit = std::sqrt(6.0 / static_cast<double>(w.cols()));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Index j = 0; j < w.cols(); ++j)
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
    return net;
  }

  std::size_t layers() const { return weights.size(); }
  bool empty() const { return weights.empty(); }
  Index input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  Index output_dim() const { return weights.empty() ? 0 : weights.back().rows(); }

  std::vector<Index> layer_sizes() const {
    std::vector<Index> s;
    if (weights.empty()) return s;
    s.push_back(input_dim());
    for (const auto& w : weights) s.push_back(w.rows());
    return s;
  }

  void validate() const {
    if (weights.size() != biases.size()) throw ShapeError("network: weight/bias layer counts differ");
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (biases[i].size() != weights[i].rows()) throw ShapeError("network: bias length mismatch at layer " + std::to_string(i));
      if (i > 0 && weights[i].cols() != weights[i - 1].rows()) {
        throw ShapeError("network: layer " + std::to_string(i) + " input does not match previous output");
      }
      if (!weights[i].allFinite() || !biases[i].allFinite()) {
        throw ShapeError("network: non-finite parameter at layer " + std::to_string(i));
      }
    }
  }

  /// Parameter handles in [W0, b0, W1, b1, ...] order.
  std::vector<ParamRef> parameters(const std::string& prefix) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const std::string idx = std::to_string(i);
      out.push_back({prefix + ".W" + idx, weights[i].data(), weights[i].rows(), weights[i].cols(), true});
      out.push_back({prefix + ".b" + idx, biases[i].data(), biases[i].size(), 1, false});
    }
    return out;
  }
};

/// Per-layer values kept by forward() for backward().
struct ForwardCache {
  std::vector<Matrix> inputs;       // inputs[i]: input of layer i
  std::vector<Matrix> preactivate;  // W_i a_i + b_i
  bool empty() const { return inputs.empty(); }
};

/// Batched forward pass, one sample per column of `in`.
inline Matrix forward(const LiftingNetwork& net, const Matrix& in, ForwardCache* cache = nullptr) {
  if (net.empty()) throw ShapeError("forward: empty network");
  if (in.rows() != net.input_dim()) {
    throw ShapeError("forward: input has " + std::to_string(in.rows()) + " rows, network expects " +
                     std::to_string(net.input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->preactivate.clear();
  }
  Matrix a = in;
  const std::size_t last = net.layers() - 1;
  for (std::size_t i = 0; i <= last; ++i) {
    Matrix z = net.weights[i] * a;
    z.colwise() += net.biases[i];
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->preactivate.push_back(z);
    }
    a = (i == last) ? std::move(z) : Matrix(z.cwiseMax(0.0));
  }
  return a;
}

inline Vector forward(const LiftingNetwork& net, const Vector& v) {
  if (v.size() != net.input_dim()) {
    throw ShapeError("forward: input length " + std::to_string(v.size()) + ", network expects " +
                     std::to_string(net.input_dim()));
  }
  return forward(net, Matrix(v), nullptr).col(0);
}

/// Reverse pass. Adds parameter gradients into `grad` (layout of
/// LiftingNetwork::parameters) and returns the gradient w.r.t. the input.
/// ReLU'(0) is taken as 0.
inline Matrix backward_accumulate(const LiftingNetwork& net, const Matrix& upstream, const ForwardCache& cache,
                                  ParameterGradient& grad, std::size_t offset = 0) {
  if (cache.empty() || cache.inputs.size() != net.layers()) {
    throw UsageError("backward: no forward cache for this network");
  }
  if (upstream.rows() != net.output_dim() || upstream.cols() != cache.inputs.front().cols()) {
    throw ShapeError("backward: upstream gradient shape does not match the cached forward pass");
  }
  if (grad.size() < offset + 2 * net.layers()) throw ShapeError("backward: gradient buffer too small");
  Matrix delta = upstream;
  for (std::size_t i = net.layers(); i-- > 0;) {
    if (i + 1 < net.layers()) {
      delta = delta.cwiseProduct((cache.preactivate[i].array() > 0.0).cast<double>().matrix());
    }
    grad[offset + 2 * i].noalias() += delta * cache.inputs[i].transpose();
    grad[offset + 2 * i + 1] += delta.rowwise().sum();
    delta = net.weights[i].transpose() * delta;
  }
  return delta;
}

struct BackwardResult {
  ParameterGradient params;
  Matrix input;
};

inline BackwardResult backward(const LiftingNetwork& net, const Matrix& upstream, const ForwardCache& cache) {
  BackwardResult r;
  for (std::size_t i = 0; i < net.layers(); ++i) {
    r.params.push_back(Matrix::Zero(net.weights[i].rows(), net.weights[i].cols()));
    r.params.push_back(Matrix::Zero(net.biases[i].size(), 1));
  }
  r.input = backward_accumulate(net, upstream, cache, r.params);
  return r;
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Matrix> first;
  std::vector<Matrix> second;
};

/// In-place Adam update with bias correction.
inline void adam_step(AdamState& state, const std::vector<ParamRef>& params, const ParameterGradient& grads) {
  if (grads.size() != params.size()) throw ShapeError("adam: gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows || grads[i].cols() != params[i].cols) {
      throw ShapeError("adam: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].allFinite()) {
      throw OptimizerError("adam: non-finite gradient for " + params[i].name, static_cast<long>(i));
    }
  }
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.push_back(Matrix::Zero(p.rows, p.cols));
      state.second.push_back(Matrix::Zero(p.rows, p.cols));
    }
  } else if (state.first.size() != params.size()) {
    throw ShapeError("adam: optimizer state does not match parameter list");
  }

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.first[i] = c.beta1 * state.first[i] + (1.0 - c.beta1) * grads[i];
    state.second[i] = c.beta2 * state.second[i] + (1.0 - c.beta2) * grads[i].cwiseAbs2();
    auto p = params[i].map();
    p.array() -= c.learning_rate * (state.first[i].array() / correct1) /
                 ((state.second[i].array() / correct2).sqrt() + c.epsilon);
  }
}

}  // namespace dkoia
