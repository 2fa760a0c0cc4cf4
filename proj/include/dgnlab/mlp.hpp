#pragma once

#include "dgnlab/core.hpp"
#include "dgnlab/rng.hpp"

#include <cstdint>
#include <cstring>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dgnlab {

enum class Mode { train, eval };

/// Weights of a feed-forward net: ReLU hidden layers, identity output.
/// weights[l] is (layer_sizes[l+1] x layer_sizes[l]); inputs are column vectors
/// and batches are stored one sample per column.
template <typename T>
struct MlpParams {
  std::vector<Index> layer_sizes;
  std::vector<MatrixX<T>> weights;
  std::vector<VectorX<T>> biases;
  T dropout_rate = T(0);

  Index input_dim() const { return layer_sizes.front(); }
  Index output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
};

/// Per-parameter gradients (also used for optimizer moments).
template <typename T>
struct GradBundle {
  std::vector<MatrixX<T>> weights;
  std::vector<VectorX<T>> biases;
};

/// Activation record produced by mlp_forward and consumed by mlp_backward.
template <typename T>
struct MlpCache {
  const MlpParams<T>* owner = nullptr;
  std::vector<MatrixX<T>> inputs;  // input to layer l (post-activation, post-dropout)
  std::vector<MatrixX<T>> pre;     // pre-activation of hidden layer l
  std::vector<MatrixX<T>> masks;   // scaled dropout masks; empty when none drawn
};

/// Builds a net with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
/// `output_scale` multiplies the last layer's initial values.
template <typename T>
MlpParams<T> mlp_init(std::vector<Index> layer_sizes, T dropout_rate, SeededRng& rng,
                      T output_scale = T(1)) {
  if (layer_sizes.size() < 2) throw ShapeError("mlp_init: need at least input and output sizes");
  if (!(dropout_rate >= T(0) && dropout_rate < T(1)))
    throw ContractError("mlp_init: dropout_rate must lie in [0, 1)");
  MlpParams<T> p;
  p.layer_sizes = std::move(layer_sizes);
  p.dropout_rate = dropout_rate;
  for (std::size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
    const Index in = p.layer_sizes[l];
    const Index out = p.layer_sizes[l + 1];
    T bound = in > 0 ? T(1) / std::sqrt(T(in)) : T(1);
    if (l + 2 == p.layer_sizes.size()) bound *= output_scale;
    MatrixX<T> w(out, in);
    for (Index c = 0; c < in; ++c)
      for (Index r = 0; r < out; ++r) w(r, c) = T(rng.uniform(-bound, bound));
    VectorX<T> b(out);
    for (Index r = 0; r < out; ++r) b[r] = T(rng.uniform(-bound, bound));
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

template <typename T>
GradBundle<T> zeros_like(const MlpParams<T>& p) {
  GradBundle<T> g;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    g.weights.push_back(MatrixX<T>::Zero(p.weights[l].rows(), p.weights[l].cols()));
    g.biases.push_back(VectorX<T>::Zero(p.biases[l].size()));
  }
  return g;
}

/// Batched forward pass; `input` holds one sample per column.
template <typename T>
MatrixX<T> mlp_forward(const MlpParams<T>& p, const MatrixX<T>& input, Mode mode, SeededRng& rng,
                       MlpCache<T>* cache = nullptr) {
  require_shape(input.rows() == p.input_dim(),
                "mlp_forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                    std::to_string(p.input_dim()));
  require_finite(input, "mlp_forward input");
  const bool drop = mode == Mode::train && p.dropout_rate > T(0);
  const T keep_scale = T(1) / (T(1) - p.dropout_rate);
  if (cache) {
    cache->owner = &p;
    cache->inputs.clear();
    cache->pre.clear();
    cache->masks.clear();
  }
  MatrixX<T> h = input;
  const std::size_t L = p.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    MatrixX<T> z = p.weights[l] * h;
    z.colwise() += p.biases[l];
    if (cache) cache->inputs.push_back(std::move(h));
    if (l + 1 == L) return z;
    if (cache) cache->pre.push_back(z);
    h = z.cwiseMax(T(0));
    if (drop) {
      MatrixX<T> mask(h.rows(), h.cols());
      for (Index c = 0; c < mask.cols(); ++c)
        for (Index r = 0; r < mask.rows(); ++r)
          mask(r, c) = rng.uniform() < double(p.dropout_rate) ? T(0) : keep_scale;
      h = h.cwiseProduct(mask);
      if (cache) cache->masks.push_back(std::move(mask));
    }
  }
  return h;  // unreachable for L >= 1
}

template <typename T>
VectorX<T> mlp_forward(const MlpParams<T>& p, const VectorX<T>& input, Mode mode, SeededRng& rng,
                       MlpCache<T>* cache = nullptr) {
  return mlp_forward(p, MatrixX<T>(input), mode, rng, cache).col(0);
}

/// Eval-mode forward that needs no generator.
template <typename T>
MatrixX<T> mlp_eval(const MlpParams<T>& p, const MatrixX<T>& input) {
  SeededRng unused(0);
  return mlp_forward(p, input, Mode::eval, unused);
}

template <typename T>
VectorX<T> mlp_eval(const MlpParams<T>& p, const VectorX<T>& input) {
  return mlp_eval(p, MatrixX<T>(input)).col(0);
}

/// Reverse-mode gradients of sum(output .* output_grad) with respect to every
/// parameter and to the input.
template <typename T>
GradBundle<T> mlp_backward(const MlpParams<T>& p, const MlpCache<T>& cache,
                           const MatrixX<T>& output_grad, MatrixX<T>* input_grad = nullptr) {
  const std::size_t L = p.num_layers();
  if (cache.owner != &p || cache.inputs.size() != L || cache.pre.size() + 1 != L)
    throw ContractError("mlp_backward: cache was not produced by a forward pass of these params");
  const Index batch = cache.inputs.front().cols();
  if (output_grad.rows() != p.output_dim() || output_grad.cols() != batch)
    throw ContractError("mlp_backward: output_grad does not match the cached forward pass");
  for (std::size_t l = 0; l < L; ++l)
    if (cache.inputs[l].rows() != p.weights[l].cols())
      throw ContractError("mlp_backward: stale cache (layer shapes changed)");

  GradBundle<T> g;
  g.weights.resize(L);
  g.biases.resize(L);
  const bool has_masks = !cache.masks.empty();
  MatrixX<T> delta = output_grad;
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l].noalias() = delta * cache.inputs[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l == 0 && !input_grad) break;
    MatrixX<T> upstream = p.weights[l].transpose() * delta;
    if (l == 0) {
      *input_grad = std::move(upstream);
      break;
    }
    const MatrixX<T>& z = cache.pre[l - 1];
    delta = upstream.cwiseProduct((z.array() > T(0)).template cast<T>().matrix());
    if (has_masks) delta = delta.cwiseProduct(cache.masks[l - 1]);
  }
  return g;
}

template <typename T>
GradBundle<T> mlp_backward(const MlpParams<T>& p, const MlpCache<T>& cache,
                           const VectorX<T>& output_grad, VectorX<T>* input_grad = nullptr) {
  MatrixX<T> ig;
  GradBundle<T> g = mlp_backward(p, cache, MatrixX<T>(output_grad), input_grad ? &ig : nullptr);
  if (input_grad) *input_grad = ig.col(0);
  return g;
}

// Flat-parameter views. Order: layer by layer, weights (column-major) then bias.

template <typename T>
std::size_t param_count(const MlpParams<T>& p) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < p.num_layers(); ++l)
    n += static_cast<std::size_t>(p.weights[l].size() + p.biases[l].size());
  return n;
}

/// Visits every parameter array of `p` together with the matching array of `g`.
template <typename T, typename F>
void for_each_pair(MlpParams<T>& p, const GradBundle<T>& g, F&& f) {
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    f(p.weights[l].data(), g.weights[l].data(), p.weights[l].size());
    f(p.biases[l].data(), g.biases[l].data(), p.biases[l].size());
  }
}

template <typename T>
VectorX<T> flatten(const MlpParams<T>& p) {
  VectorX<T> out(static_cast<Index>(param_count(p)));
  Index k = 0;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    out.segment(k, p.weights[l].size()) = p.weights[l].reshaped();
    k += p.weights[l].size();
    out.segment(k, p.biases[l].size()) = p.biases[l];
    k += p.biases[l].size();
  }
  return out;
}

template <typename T>
VectorX<T> flatten(const GradBundle<T>& g) {
  Index n = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) n += g.weights[l].size() + g.biases[l].size();
  VectorX<T> out(n);
  Index k = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.segment(k, g.weights[l].size()) = g.weights[l].reshaped();
    k += g.weights[l].size();
    out.segment(k, g.biases[l].size()) = g.biases[l];
    k += g.biases[l].size();
  }
  return out;
}

/// FNV-1a over the raw parameter bytes; equal hashes mean bit-identical params.
template <typename T>
std::uint64_t param_hash(const MlpParams<T>& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const T* data, Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    eat(p.weights[l].data(), p.weights[l].size());
    eat(p.biases[l].data(), p.biases[l].size());
  }
  return h;
}

template <typename T>
void add_scaled(GradBundle<T>& acc, const GradBundle<T>& g, T scale) {
  for (std::size_t l = 0; l < acc.weights.size(); ++l) {
    acc.weights[l] += scale * g.weights[l];
    acc.biases[l] += scale * g.biases[l];
  }
}

template <typename T>
bool all_finite(const GradBundle<T>& g) {
  for (std::size_t l = 0; l < g.weights.size(); ++l)
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite()) return false;
  return true;
}

/// target <- rate * online + (1 - rate) * target, elementwise.
template <typename T>
void polyak_blend(MlpParams<T>& target, const MlpParams<T>& online, T rate) {
  require_shape(target.layer_sizes == online.layer_sizes, "polyak_blend: shape mismatch");
  for (std::size_t l = 0; l < target.num_layers(); ++l) {
    target.weights[l] = rate * online.weights[l] + (T(1) - rate) * target.weights[l];
    target.biases[l] = rate * online.biases[l] + (T(1) - rate) * target.biases[l];
  }
}

}  // namespace dgnlab
