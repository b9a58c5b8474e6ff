#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ganglionet/random.hpp"
#include "ganglionet/tensor.hpp"

namespace ganglionet {

template <typename T>
struct ParamEntry {
  std::string name;
  BasicTensor<T> weight;
  BasicTensor<T> adam_m;
  BasicTensor<T> adam_v;
};

template <typename T>
using GradMap = std::map<std::string, BasicTensor<T>>;

/// Named learnable tensors with Adam moments. Iteration follows insertion order.
template <typename T>
class BasicParamStore {
 public:
  void add(const std::string& name, BasicTensor<T> weight) {
    require(!index_.contains(name), ErrorCode::InvalidArgument, "duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    auto zeros = BasicTensor<T>::zeros_like(weight);
    entries_.push_back({name, std::move(weight), zeros, zeros});
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  ParamEntry<T>& entry(const std::string& name) { return entries_[lookup(name)]; }
  const ParamEntry<T>& entry(const std::string& name) const { return entries_[lookup(name)]; }
  BasicTensor<T>& weight(const std::string& name) { return entry(name).weight; }
  const BasicTensor<T>& weight(const std::string& name) const { return entry(name).weight; }

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::uint64_t step_count() const { return step_count_; }
  void set_step_count(std::uint64_t steps) { step_count_ = steps; }

  template <typename U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& e : entries_) {
      out.add(e.name, e.weight.template cast<U>());
      out.entry(e.name).adam_m = e.adam_m.template cast<U>();
      out.entry(e.name).adam_v = e.adam_v.template cast<U>();
    }
    out.set_step_count(step_count_);
    return out;
  }

  friend bool operator==(const BasicParamStore& a, const BasicParamStore& b) {
    if (a.step_count_ != b.step_count_ || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto &x = a.entries_[i], &y = b.entries_[i];
      if (x.name != y.name || x.weight != y.weight || x.adam_m != y.adam_m || x.adam_v != y.adam_v) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorCode::InvalidArgument, "unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<ParamEntry<T>> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_count_ = 0;
};

using ParamStore = BasicParamStore<float>;

template <typename T>
std::size_t count_parameters(const BasicParamStore<T>& store) {
  std::size_t n = 0;
  for (const auto& e : store.entries()) n += e.weight.size();
  return n;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. `grads` must be keyed exactly like the store.
template <typename T>
void adam_step(BasicParamStore<T>& store, const GradMap<T>& grads, double lr, const AdamConfig& cfg = {}) {
  require(grads.size() == store.size(), ErrorCode::InvalidArgument,
          "adam_step: " + std::to_string(grads.size()) + " gradients for " + std::to_string(store.size()) +
              " parameters");
  for (const auto& e : store.entries())
    require(grads.contains(e.name), ErrorCode::InvalidArgument, "adam_step: missing gradient for '" + e.name + "'");

  const std::uint64_t step = store.step_count() + 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(cfg.epsilon);

  for (auto& e : store.entries()) {
    const auto& g = grads.at(e.name);
    require(g.shape() == e.weight.shape(), ErrorCode::ShapeMismatch,
            "adam_step: gradient " + shape_string(g.shape()) + " for '" + e.name + "' of shape " +
                shape_string(e.weight.shape()));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T gi = g[i];
      e.adam_m[i] = b1 * e.adam_m[i] + (T{1} - b1) * gi;
      e.adam_v[i] = b2 * e.adam_v[i] + (T{1} - b2) * gi * gi;
      e.weight[i] -= step_size * e.adam_m[i] / (std::sqrt(e.adam_v[i]) * inv_sqrt_c2 + eps);
    }
  }
  store.set_step_count(step);
}

/// He-normal initialisation: N(0, sqrt(2 / fan_in)) with fan_in = product of all but the last extent.
template <typename T = float>
BasicTensor<T> he_init(const Shape& shape, std::uint64_t seed) {
  BasicTensor<T> t(shape);
  std::size_t fan_in = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace ganglionet
