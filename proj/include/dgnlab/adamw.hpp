#pragma once

#include "dgnlab/mlp.hpp"

#include <cmath>

namespace dgnlab {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct AdamWState {
  GradBundle<T> first_moment;
  GradBundle<T> second_moment;
  long step_count = 0;
  AdamWConfig config;
};

template <typename T>
AdamWState<T> adamw_init(const MlpParams<T>& p, AdamWConfig config) {
  return AdamWState<T>{zeros_like(p), zeros_like(p), 0, config};
}

/// One AdamW step, updating `p` and `state` in place. Weight decay is decoupled:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
/// Throws NumericError (leaving both untouched) on non-finite gradients.
template <typename T>
void adamw_step(MlpParams<T>& p, const GradBundle<T>& grads, AdamWState<T>& state) {
  if (grads.weights.size() != p.num_layers() || state.first_moment.weights.size() != p.num_layers())
    throw ShapeError("adamw_step: gradient/state layer count does not match params");
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    require_shape(grads.weights[l].rows() == p.weights[l].rows() &&
                      grads.weights[l].cols() == p.weights[l].cols() &&
                      grads.biases[l].size() == p.biases[l].size(),
                  "adamw_step: gradient shape mismatch at layer " + std::to_string(l));
  }
  if (!all_finite(grads)) throw NumericError("adamw_step: non-finite gradient");

  const AdamWConfig& c = state.config;
  ++state.step_count;
  const T b1 = T(c.beta1), b2 = T(c.beta2);
  const T bc1 = T(1) - std::pow(b1, T(state.step_count));
  const T bc2 = T(1) - std::pow(b2, T(state.step_count));
  const T lr = T(c.learning_rate), wd = T(c.weight_decay), eps = T(c.epsilon);

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    auto m_hat = m.array() / bc1;
    auto v_hat = v.array() / bc2;
    param.array() -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * param.array());
  };
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    update(p.weights[l], grads.weights[l], state.first_moment.weights[l],
           state.second_moment.weights[l]);
    update(p.biases[l], grads.biases[l], state.first_moment.biases[l], state.second_moment.biases[l]);
  }
}

/// Central-difference gradient of `f` at `p`, one parameter at a time.
template <typename T, typename F>
GradBundle<T> finite_diff_grad(F&& f, const MlpParams<T>& p, T h) {
  if (!(h > T(0))) throw ContractError("finite_diff_grad: h must be positive");
  MlpParams<T> work = p;
  GradBundle<T> g = zeros_like(p);
  auto probe = [&](T& slot) {
    const T saved = slot;
    slot = saved + h;
    const T up = f(static_cast<const MlpParams<T>&>(work));
    slot = saved - h;
    const T down = f(static_cast<const MlpParams<T>&>(work));
    slot = saved;
    return (up - down) / (T(2) * h);
  };
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    for (Index i = 0; i < work.weights[l].size(); ++i)
      g.weights[l].data()[i] = probe(work.weights[l].data()[i]);
    for (Index i = 0; i < work.biases[l].size(); ++i) g.biases[l][i] = probe(work.biases[l][i]);
  }
  return g;
}

/// Largest elementwise relative error |a-b| / max(|a|, |b|, floor).
template <typename T>
T max_relative_error(const GradBundle<T>& a, const GradBundle<T>& b, T floor = T(1e-6)) {
  const VectorX<T> fa = flatten(a), fb = flatten(b);
  require_shape(fa.size() == fb.size(), "max_relative_error: size mismatch");
  T worst = T(0);
  for (Index i = 0; i < fa.size(); ++i) {
    const T denom = std::max({std::abs(fa[i]), std::abs(fb[i]), floor});
    worst = std::max(worst, std::abs(fa[i] - fb[i]) / denom);
  }
  return worst;
}

}  // namespace dgnlab
