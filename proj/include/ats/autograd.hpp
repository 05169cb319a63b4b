#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>

#include "ats/param_set.hpp"
#include "ats/tape.hpp"

namespace ats {

// Lazily binds parameters into a tape: a parameter becomes a tape input the
// first time the graph touches it, trainable parameters with gradients
// enabled, frozen ones as constants.
template <class T>
class ParamBinding {
 public:
  ParamBinding(Tape<T>& tape, const ParamSet<T>& params, bool grads_enabled = true)
      : tape_(tape), params_(params), grads_enabled_(grads_enabled) {}

  typename Tape<T>::Id operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const auto& entry = params_.at(name);
    auto id = tape_.input(entry.value, name,
                          grads_enabled_ && entry.trainable);
    bound_.emplace(name, id);
    return id;
  }

  bool touched(const std::string& name) const { return bound_.count(name) != 0; }

  // Gradients for every trainable parameter; parameters the graph never
  // touched get zeros.
  std::map<std::string, Tensor<T>> collect_grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, entry] : params_) {
      if (!entry.trainable) continue;
      auto it = bound_.find(name);
      if (it == bound_.end()) {
        out.emplace(name, Tensor<T>::zeros(entry.value.shape()));
      } else {
        out.emplace(name, tape_.grad(it->second));
      }
    }
    return out;
  }

  Tape<T>& tape() { return tape_; }

 private:
  Tape<T>& tape_;
  const ParamSet<T>& params_;
  bool grads_enabled_;
  std::map<std::string, typename Tape<T>::Id> bound_;
};

template <class T>
struct ForwardBackwardResult {
  T loss;
  std::map<std::string, Tensor<T>> grads;
};

// Runs `graph_fn` (which composes tape primitives over bound parameters and
// returns a scalar loss node), then a full backward sweep. Every trainable
// parameter gets exactly one gradient tensor; untouched ones get zeros.
template <class T, class Fn>
ForwardBackwardResult<T> forward_backward(const ParamSet<T>& params, Fn&& graph_fn) {
  Tape<T> tape;
  ParamBinding<T> bind(tape, params);
  typename Tape<T>::Id loss = graph_fn(tape, bind);
  if (tape.value(loss).numel() != 1) {
    throw ShapeError("forward_backward: graph_fn must return a scalar loss");
  }
  tape.backward(loss);
  return {tape.value(loss)[0], bind.collect_grads()};
}

}  // namespace ats
