#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cinformer/errors.hpp"

namespace cinformer {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace ad {

template <class T>
struct Node;

template <class T>
using BackwardFn = std::function<void(Node<T>&)>;

/// One value in the computation graph. Parents are kept alive by the node so
/// the graph reachable from a loss is exactly its tape.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn<T> backward;
  const char* op = "leaf";

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Gradient recording is on by default; NoGradGuard disables it for the
// current thread (evaluation, selection statistics, profiling).
namespace detail {
inline thread_local bool g_grad_enabled = true;
}  // namespace detail

inline bool grad_enabled() { return detail::g_grad_enabled; }

class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Digest of every data-dependent branch taken by non-smooth ops (ReLU sign
/// patterns, argmax positions, Top-K selections). The finite-difference
/// harness compares digests between the +h and -h evaluations to detect
/// probes that straddle a kink.
class BranchTrace {
 public:
  class Scope {
   public:
    Scope() : previous_(state().enabled) {
      state().enabled = true;
      state().digest = kOffset;
    }
    ~Scope() { state().enabled = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    bool previous_;
  };

  static bool enabled() { return state().enabled; }
  static std::uint64_t digest() { return state().digest; }
  static void reset() { state().digest = kOffset; }

  static void record(std::uint64_t v) {
    auto& s = state();
    if (!s.enabled) return;
    for (int i = 0; i < 8; ++i) {
      s.digest ^= (v >> (8 * i)) & 0xffu;
      s.digest *= kPrime;
    }
  }

 private:
  static constexpr std::uint64_t kOffset = 1469598103934665603ull;
  static constexpr std::uint64_t kPrime = 1099511628211ull;
  struct State {
    bool enabled = false;
    std::uint64_t digest = kOffset;
  };
  static State& state() {
    static thread_local State s;
    return s;
  }
};

// Test hook: scales the upstream gradient of every node produced by the named
// op before its backward rule runs. Used to prove the gradient checker fails
// on a broken rule.
namespace testing {
struct Fault {
  std::string op;
  double factor = 1.0;
};
inline Fault& fault() {
  static thread_local Fault f;
  return f;
}
inline void inject_fault(std::string op, double factor) { fault() = {std::move(op), factor}; }
inline void clear_fault() { fault() = {}; }
}  // namespace testing

template <class T>
void check_finite(std::span<const T> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value in ") + what + " at flat index " +
                         std::to_string(i));
    }
  }
}

/// Handle to a graph node. Copies share the node.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> v(cinformer::numel(shape), T(0));
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    std::vector<T> v(cinformer::numel(shape), fill);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape.empty()) shape = {1};
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }
    if (cinformer::numel(shape) != values.size()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + to_string(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  // Negative axes count from the back.
  std::size_t dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                           to_string(shape()));
    }
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return !node_->backward; }
  const char* op() const { return node_->op; }

  T item() const {
    if (numel() != 1) {
      throw DimensionError("item() on non-scalar tensor of shape " + to_string(shape()));
    }
    return node_->value[0];
  }

  T operator[](std::size_t flat) const { return node_->value[flat]; }

  Tensor detach() const { return from(shape(), node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the result of an op. The graph edge and backward rule are recorded
/// only when gradients are enabled and some input participates. A non-finite
/// output raises NumericError naming the op.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward) {
  check_finite<T>(value, op);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const Tensor<T>* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor<T>* in : inputs) n->parents.push_back(in->node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      const std::vector<Tensor<T>>& inputs, BackwardFn<T> backward) {
  check_finite<T>(value, op);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

/// Topologically ordered list of the nodes reachable from a root: every
/// node's parents precede it.
template <class T>
std::vector<Node<T>*> tape_of(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  std::unordered_set<Node<T>*> marks;
  auto marked = [&marks](Node<T>* n) { return marks.count(n) != 0; };
  auto mark = [&marks](Node<T>* n) { marks.insert(n); };
  stack.emplace_back(root, 0);
  mark(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !marked(p)) {
        mark(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are released afterwards.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || !loss.requires_grad()) {
    throw UsageError("backward() called on a tensor that is not on the gradient tape");
  }
  if (loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  Node<T>* root = loss.node();
  const auto order = tape_of(root);
  root->grad_buffer()[0] += T(1);
  const auto& fault = testing::fault();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    if (!fault.op.empty() && fault.op == n->op) {
      for (T& g : n->grad) g = static_cast<T>(g * fault.factor);
    }
    n->backward(*n);
    if (n != root) n->grad.clear();
  }
  root->grad.clear();
  for (Node<T>* n : order) {
    if (!n->backward && !n->grad.empty()) check_finite<T>(n->grad, "leaf gradient");
  }
}

}  // namespace ad
}  // namespace cinformer
