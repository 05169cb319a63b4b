#pragma once

#include <map>
#include <string>
#include <vector>

#include "ats/errors.hpp"
#include "ats/tensor.hpp"

namespace ats {

// Named parameter tensors with a per-parameter trainable flag. Names are
// dot-separated paths; iteration order is always name-sorted, which keeps
// every downstream artifact (gradients, optimizer state, checkpoints)
// deterministic.
template <class T>
class ParamSet {
 public:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor<T> value, bool trainable) {
    auto [it, inserted] = entries_.emplace(name, Entry{std::move(value), trainable});
    (void)it;
    if (!inserted) {
      throw ShapeError("parameter '" + name + "' already exists");
    }
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw ShapeError("unknown parameter '" + name + "'");
    }
    return it->second;
  }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw ShapeError("unknown parameter '" + name + "'");
    }
    return it->second;
  }

  const Tensor<T>& value(const std::string& name) const { return at(name).value; }
  Tensor<T>& value(const std::string& name) { return at(name).value; }

  void set_trainable(const std::string& name, bool trainable) {
    at(name).trainable = trainable;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) {
      if (v.trainable) out.push_back(k);
    }
    return out;
  }

  size_t size() const { return entries_.size(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace ats
