#pragma once

#include <functional>
#include <map>
#include <string>

#include "ats/errors.hpp"
#include "ats/param_set.hpp"

namespace ats {

// Central-difference gradient estimate, the independent oracle used by every
// gradient test: (f(p + eps) - f(p - eps)) / (2 eps), one entry at a time,
// over all trainable parameters. Only meaningful in 64-bit.
template <class T>
std::map<std::string, Tensor<T>> finite_difference_grad(
    const std::function<double(const ParamSet<T>&)>& scalar_fn,
    const ParamSet<T>& params, double epsilon) {
  if (!(epsilon > 0)) {
    throw ConfigError("finite_difference_grad: epsilon must be positive");
  }
  ParamSet<T> work;
  for (const auto& [name, entry] : params) {
    work.add(name, entry.value, entry.trainable);
  }
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, entry] : params) {
    if (!entry.trainable) continue;
    Tensor<T> g = Tensor<T>::zeros(entry.value.shape());
    Tensor<T>& w = work.value(name);
    for (size_t i = 0; i < w.numel(); ++i) {
      const T orig = w[i];
      w[i] = orig + static_cast<T>(epsilon);
      const double fp = scalar_fn(work);
      w[i] = orig - static_cast<T>(epsilon);
      const double fm = scalar_fn(work);
      w[i] = orig;
      g[i] = static_cast<T>((fp - fm) / (2.0 * epsilon));
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

// Relative disagreement shared by gradient checks. Entries below the floor
// are compared on the floor's scale: a pure per-entry ratio is meaningless
// where the gradient itself is at the noise level of the central difference.
inline double rel_err(double a, double b, double floor_val = 1e-3) {
  const double denom = std::max({floor_val, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

}  // namespace ats
