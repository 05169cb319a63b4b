#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "ats/errors.hpp"
#include "ats/param_set.hpp"

namespace ats {

struct AdamWHyperparams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay: the decay term multiplies the parameter directly
// and never enters the moment estimates, so a zero-gradient step shrinks a
// parameter by exactly (1 - lr * weight_decay).
template <class T>
struct AdamWState {
  AdamWHyperparams hp;
  int64_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;

  static AdamWState init(const ParamSet<T>& params, const AdamWHyperparams& hp) {
    AdamWState s;
    s.hp = hp;
    for (const auto& [name, entry] : params) {
      if (!entry.trainable) continue;
      s.m.emplace(name, Tensor<T>::zeros(entry.value.shape()));
      s.v.emplace(name, Tensor<T>::zeros(entry.value.shape()));
    }
    return s;
  }
};

// One optimizer step. `grads` must cover exactly the trainable parameters;
// frozen parameters are left bit-identical.
template <class T>
void adamw_step(ParamSet<T>& params,
                const std::map<std::string, Tensor<T>>& grads,
                AdamWState<T>& state) {
  for (const auto& [name, entry] : params) {
    if (entry.trainable && grads.find(name) == grads.end()) {
      throw ShapeError("adamw_step: missing gradient for trainable '" + name + "'");
    }
  }
  for (const auto& [name, g] : grads) {
    if (!params.has(name) || !params.at(name).trainable) {
      throw ShapeError("adamw_step: gradient for unknown or frozen '" + name + "'");
    }
    if (!g.same_shape(params.at(name).value)) {
      throw ShapeError("adamw_step: gradient shape " + g.shape_str() +
                       " mismatches parameter '" + name + "' " +
                       params.at(name).value.shape_str());
    }
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.hp.beta2, static_cast<double>(state.step));
  const T lr = static_cast<T>(state.hp.lr);
  const T beta1 = static_cast<T>(state.hp.beta1);
  const T beta2 = static_cast<T>(state.hp.beta2);
  const T eps = static_cast<T>(state.hp.eps);
  const T wd = static_cast<T>(state.hp.weight_decay);
  const T inv_bc1 = static_cast<T>(1.0 / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);

  const T decay = T(1) - lr * wd;
  for (auto& [name, entry] : params) {
    if (!entry.trainable) continue;
    const Tensor<T>& g = grads.at(name);
    Tensor<T>& m = state.m.at(name);
    Tensor<T>& v = state.v.at(name);
    T* p = entry.value.data();
    for (size_t i = 0; i < entry.value.numel(); ++i) {
      m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
      v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
      const T mhat = m[i] * inv_bc1;
      const T vhat = v[i] * inv_bc2;
      p[i] = p[i] * decay - lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace ats
