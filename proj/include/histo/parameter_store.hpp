#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "histo/tape.hpp"
#include "histo/tensor.hpp"

namespace histo {

// Named learnable tensors in insertion order, each with a gradient buffer and
// AdamW moment buffers of the same shape.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;
    Tensor<T> v;
  };

  Tensor<T>& add(std::string name, Tensor<T> init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    Entry e;
    e.name = std::move(name);
    e.grad = Tensor<T>(init.shape());
    e.m = Tensor<T>(init.shape());
    e.v = Tensor<T>(init.shape());
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  Entry& entry(const std::string& name) { return entries_[index_of(name)]; }
  const Entry& entry(const std::string& name) const { return entries_[index_of(name)]; }
  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T(0));
    grads_ready = false;
  }

  // Adam step counter and whether gradients were populated since the last step.
  std::int64_t step = 0;
  bool grads_ready = false;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Binds store parameters onto one tape as gradient-carrying leaves, once per
// name, so repeated uses accumulate into a single gradient.
template <class T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, const ParameterStore<T>& store) : tape_(tape), store_(store) {}

  Var<T> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var<T> v = tape_.leaf(store_.value(name), true);
    bound_.emplace(name, v);
    return v;
  }

  // Uses an existing variable for `name` instead of a fresh leaf.
  void bind(const std::string& name, Var<T> v) {
    if (store_.value(name).shape() != v.shape())
      throw DimensionError("bind: shape mismatch for '" + name + "': " + shape_str(v.shape()));
    bound_[name] = std::move(v);
  }

  Tape<T>& tape() { return tape_; }

  // Adds `scale` times each bound leaf's gradient into `grads` (store order).
  void accumulate_grads(std::vector<Tensor<T>>& grads, T scale = T(1)) const {
    const auto& entries = store_.entries();
    if (grads.size() != entries.size()) {
      grads.clear();
      for (const auto& e : entries) grads.emplace_back(e.value.shape());
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto it = bound_.find(entries[i].name);
      if (it == bound_.end() || it->second.grad().empty()) continue;
      const Tensor<T>& g = it->second.grad();
      T* dst = grads[i].ptr();
      for (std::int64_t j = 0; j < g.numel(); ++j) dst[j] += scale * g[static_cast<std::size_t>(j)];
    }
  }

 private:
  Tape<T>& tape_;
  const ParameterStore<T>& store_;
  std::map<std::string, Var<T>> bound_;
};

}  // namespace histo
