#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cinformer/config.hpp"
#include "cinformer/rng.hpp"
#include "cinformer/tensor.hpp"

namespace cinformer {

using ad::Tensor;

enum class InitKind { kKaimingUniform, kZeros, kOnes };

/// Declared parameter: dotted path, shape, initializer. fan_in bounds the
/// Kaiming-uniform draw at sqrt(6 / fan_in).
struct ParamSpec {
  std::string path;
  Shape shape;
  InitKind init = InitKind::kKaimingUniform;
  std::size_t fan_in = 1;
};

using ParamLayout = std::vector<ParamSpec>;

/// Parameters keyed by dotted path, iterated lexicographically. A parameter
/// that is not trainable does not record gradients and is skipped by the
/// optimizer.
template <class T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };
  using Map = std::map<std::string, Entry, std::less<>>;

  Tensor<T>& add(const std::string& path, Tensor<T> value, bool trainable = true) {
    if (entries_.count(path) != 0) throw StateError("duplicate parameter path " + path);
    value.set_requires_grad(trainable);
    return entries_.emplace(path, Entry{std::move(value), trainable}).first->second.value;
  }

  bool contains(std::string_view path) const { return entries_.find(path) != entries_.end(); }

  const Tensor<T>& get(std::string_view path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw StateError("missing parameter " + std::string(path));
    return it->second.value;
  }

  Tensor<T>& get(std::string_view path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw StateError("missing parameter " + std::string(path));
    return it->second.value;
  }

  bool trainable(std::string_view path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw StateError("missing parameter " + std::string(path));
    return it->second.trainable;
  }

  // Applies to every path starting with `prefix`.
  void set_trainable(std::string_view prefix, bool on) {
    for (auto& [path, e] : entries_) {
      if (path.compare(0, prefix.size(), prefix) == 0) {
        e.trainable = on;
        e.value.set_requires_grad(on);
      }
    }
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.value.zero_grad();
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count(std::string_view prefix = {}) const {
    std::size_t n = 0;
    for (const auto& [path, e] : entries_) {
      if (path.compare(0, prefix.size(), prefix) == 0) n += e.value.numel();
    }
    return n;
  }

  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }
  typename Map::iterator begin() { return entries_.begin(); }
  typename Map::iterator end() { return entries_.end(); }

  /// Deep copy into another precision; trainable flags carry over.
  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [path, e] : entries_) {
      std::vector<U> v(e.value.values().begin(), e.value.values().end());
      out.add(path, Tensor<U>::from(e.value.shape(), std::move(v)), e.trainable);
    }
    return out;
  }

  /// Deep copy in the same precision.
  ParamStore clone() const { return cast<T>(); }

 private:
  Map entries_;
};

/// Every parameter of the model described by `config`.
ParamLayout model_layout(const ModelConfig& config);

/// Draws the parameters of `layout` in lexicographic path order from one
/// stream; weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
ParamStore<float> init_params(const ParamLayout& layout, SeededRng& rng);

/// Model parameters for `config`, with the stem frozen when requested.
ParamStore<float> init_model_params(const ModelConfig& config, SeededRng& rng);

}  // namespace cinformer
