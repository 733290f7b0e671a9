#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ghostprobe/errors.hpp"

namespace ghostprobe {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Tensor storage starts on a 64-byte boundary so that vectorized kernels take
// the same code path, and give the same bits, wherever the buffer lands.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorNode {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty unless requires_grad
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

// Dense row-major tensor handle. Copies share the underlying node; the graph
// built by operations is released when the last handle to its root goes away.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  BasicTensor() = default;

  BasicTensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : BasicTensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}

  BasicTensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false)
      : BasicTensor(std::move(shape), Buffer<T>(data), requires_grad) {}

  BasicTensor(Shape shape, Buffer<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw DimensionError("tensor data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    set_requires_grad(requires_grad);
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return BasicTensor(std::move(shape), Buffer<T>(n, T{0}), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return BasicTensor(std::move(shape), Buffer<T>(n, value), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{}, Buffer<T>{value}, requires_grad);
  }

  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  // Negative axes count from the end.
  std::int64_t dim(std::int64_t axis) const {
    const auto r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("axis out of range for " + shape_str(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
  }

  std::span<const T> data() const { return node_->data; }
  // Direct write access; meant for parameter initialization and optimizer updates.
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  T at(std::initializer_list<std::int64_t> index) const {
    if (index.size() != node_->shape.size()) throw DimensionError("index rank mismatch");
    std::int64_t flat = 0;
    std::size_t i = 0;
    for (auto v : index) {
      const auto extent = node_->shape[i++];
      if (v < 0 || v >= extent) throw DimensionError("index out of range");
      flat = flat * extent + v;
    }
    return node_->data[static_cast<std::size_t>(flat)];
  }

  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool value) {
    node_->requires_grad = value;
    if (value) {
      node_->ensure_grad();
    } else {
      node_->grad.clear();
    }
  }

  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }

  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
  }

  const char* op() const { return node_->op; }

  // Fresh leaf holding a copy of the values.
  BasicTensor detach() const { return BasicTensor(node_->shape, node_->data, false); }

  template <typename U>
  BasicTensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return BasicTensor<U>(node_->shape, std::move(out), requires_grad);
  }

  const std::shared_ptr<Node>& node() const { return node_; }

  bool all_finite() const {
    for (const T v : node_->data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

namespace detail {

// Post-order over the graph reachable from root, parents before children.
template <typename T>
std::vector<TensorNode<T>*> topological_order(TensorNode<T>* root) {
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate, so callers
// zero them between steps.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  auto* root = loss.node().get();
  const auto order = detail::topological_order(root);
  for (auto* node : order) {
    if (node->backward_fn) std::fill(node->grad.begin(), node->grad.end(), T{0});
  }
  root->ensure_grad();
  root->grad[0] = T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (!node->backward_fn) continue;
    for (auto& p : node->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    node->backward_fn(*node);
  }
}

// Name of the earliest op (in evaluation order) whose output holds NaN/Inf,
// or an empty string when the whole graph is finite.
template <typename T>
std::string first_nonfinite_op(const BasicTensor<T>& root) {
  struct Frame {
    TensorNode<T>* node;
    std::size_t next;
  };
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited{root.node().get()};
  std::vector<Frame> stack{{root.node().get(), 0}};
  while (!stack.empty()) {
    auto& frame = stack.back();
    if (frame.next < frame.node->parents.size()) {
      TensorNode<T>* parent = frame.node->parents[frame.next++].get();
      if (visited.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(frame.node);
      stack.pop_back();
    }
  }
  for (auto* node : order) {
    for (const T v : node->data) {
      if (!std::isfinite(v)) return node->op;
    }
  }
  return {};
}

}  // namespace ghostprobe
