#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dil/common.hpp"
#include "dil/digest.hpp"

namespace dil {

// Reverse-mode autograd over dense row-major tensors. Ops record a node per
// produced tensor; backward() walks the recorded graph once in reverse
// topological order and then clears it, so each forward pass supports exactly
// one backward pass. Tensors are handles: copies share storage, clone() does
// a deep copy.

template <typename T>
struct TensorImpl;

template <typename T>
struct AutogradNode {
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  // Reads the output's grad and accumulates into the parents' grads.
  std::function<void(const TensorImpl<T>&)> backprop;
};

template <typename T>
struct TensorImpl {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  bool graph_consumed = false;
  std::shared_ptr<AutogradNode<T>> grad_fn;
};

inline size_t shape_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw AutogradError("tensor shape must not be empty");
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw AutogradError("tensor dimensions must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape) {
    return filled(std::move(shape), T(0));
  }

  static Tensor filled(std::vector<int> shape, T value) {
    auto impl = std::make_shared<TensorImpl<T>>();
    const size_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->data.assign(n, value);
    return Tensor(std::move(impl));
  }

  static Tensor from(std::vector<int> shape, std::vector<T> values) {
    const size_t n = shape_numel(shape);
    if (n != values.size()) {
      throw AutogradError("tensor data length does not match its shape");
    }
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    ensure_finite<T>(impl->data, "tensor construction");
    return Tensor(std::move(impl));
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  bool defined() const { return impl_ != nullptr; }

  const std::vector<int>& shape() const { return checked().shape; }
  int dim(int i) const { return checked().shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(checked().shape.size()); }
  size_t numel() const { return checked().data.size(); }

  std::span<const T> data() const { return checked().data; }

  // In-place mutation is reserved for leaf updates (initialization, the
  // optimizer, running statistics); tensors produced by ops are immutable.
  std::span<T> raw_data() { return checked().data; }

  bool requires_grad() const { return checked().requires_grad; }
  Tensor& set_requires_grad(bool v) {
    checked().requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !checked().grad.empty(); }
  std::span<const T> grad() const {
    const auto& impl = checked();
    if (impl.grad.empty()) throw AutogradError("tensor has no gradient");
    return impl.grad;
  }
  void clear_grad() { checked().grad.clear(); }

  T item() const {
    const auto& impl = checked();
    if (impl.data.size() != 1) throw AutogradError("item() needs a scalar tensor");
    return impl.data[0];
  }

  // Deep copy of the values; the clone is a leaf with no graph attached.
  Tensor clone() const {
    const auto& impl = checked();
    auto copy = std::make_shared<TensorImpl<T>>();
    copy->shape = impl.shape;
    copy->data = impl.data;
    copy->requires_grad = impl.requires_grad;
    return Tensor(std::move(copy));
  }

  uint64_t digest() const { return digest_values<T>(checked().data); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  TensorImpl<T>& checked() const {
    if (!impl_) throw AutogradError("operation on an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
inline void accumulate_grad(TensorImpl<T>& target, std::span<const T> delta,
                            const char* op) {
  ensure_finite<T>(delta, op);
  if (target.grad.empty()) target.grad.assign(target.data.size(), T(0));
  for (size_t i = 0; i < delta.size(); ++i) target.grad[i] += delta[i];
}

// Assembles an op result: validates finiteness, propagates requires_grad and
// records an autograd node when any parent participates in the graph.
template <typename T>
inline Tensor<T> make_result(std::vector<int> shape, std::vector<T> data,
                             const char* op,
                             std::vector<Tensor<T>> parents,
                             std::function<void(const TensorImpl<T>&)> backprop) {
  auto impl = std::make_shared<TensorImpl<T>>();
  if (shape_numel(shape) != data.size()) {
    throw AutogradError(std::string(op) + ": result data does not match shape");
  }
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  ensure_finite<T>(impl->data, op);
  bool track = false;
  for (const auto& p : parents) track = track || p.requires_grad();
  impl->requires_grad = track;
  if (track) {
    auto node = std::make_shared<AutogradNode<T>>();
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.impl());
    node->backprop = std::move(backprop);
    impl->grad_fn = std::move(node);
  }
  return Tensor<T>(std::move(impl));
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw AutogradError(std::string(op) + ": operand shapes differ");
  }
}

}  // namespace detail

// Populates grads of every requires_grad tensor reachable from `loss`,
// visiting each recorded node exactly once, then clears the graph. A second
// backward without a fresh forward pass is an error.
template <typename T>
inline void backward(const Tensor<T>& loss) {
  auto root = loss.impl();
  if (!root) throw AutogradError("backward on an undefined tensor");
  if (root->data.size() != 1) {
    throw AutogradError("backward requires a scalar loss");
  }
  if (root->graph_consumed) {
    throw AutogradError("backward called twice without a new forward pass");
  }
  if (!root->requires_grad) {
    throw AutogradError("backward on a tensor that does not require grad");
  }

  // Iterative DFS over parent edges; reversed finish order is a topological
  // order, so every node is processed before any of its parents. The order
  // holds shared ownership because clearing a node's grad_fn below drops the
  // graph's references to its parents.
  std::vector<std::shared_ptr<TensorImpl<T>>> order;
  std::unordered_set<TensorImpl<T>*> visited;
  struct Frame {
    std::shared_ptr<TensorImpl<T>> node;
    size_t next;
  };
  std::vector<Frame> stack;
  visited.insert(root.get());
  stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& frame = stack.back();
    if (!frame.node->grad_fn ||
        frame.next == frame.node->grad_fn->parents.size()) {
      order.push_back(frame.node);
      stack.pop_back();
      continue;
    }
    std::shared_ptr<TensorImpl<T>> parent =
        frame.node->grad_fn->parents[frame.next++];
    if (parent->grad_fn && !visited.count(parent.get())) {
      visited.insert(parent.get());
      stack.push_back({std::move(parent), 0});
    }
  }

  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>& node = **it;
    if (node.grad_fn) {
      if (!node.grad.empty()) node.grad_fn->backprop(node);
      node.grad_fn.reset();  // graph is cleared as it is consumed
    }
    node.graph_consumed = true;
  }
}

// ---- elementwise and reduction ops ----

template <typename T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), "add", {a, b},
      [pa, pb](const TensorImpl<T>& res) {
        if (pa->requires_grad) detail::accumulate_grad<T>(*pa, res.grad, "add");
        if (pb->requires_grad) detail::accumulate_grad<T>(*pb, res.grad, "add");
      });
}

template <typename T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), "sub", {a, b},
      [pa, pb](const TensorImpl<T>& res) {
        if (pa->requires_grad) detail::accumulate_grad<T>(*pa, res.grad, "sub");
        if (pb->requires_grad) {
          std::vector<T> neg(res.grad.size());
          for (size_t i = 0; i < neg.size(); ++i) neg[i] = -res.grad[i];
          detail::accumulate_grad<T>(*pb, neg, "sub");
        }
      });
}

template <typename T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), "mul", {a, b},
      [pa, pb](const TensorImpl<T>& res) {
        if (pa->requires_grad) {
          std::vector<T> d(res.grad.size());
          for (size_t i = 0; i < d.size(); ++i) d[i] = res.grad[i] * pb->data[i];
          detail::accumulate_grad<T>(*pa, d, "mul");
        }
        if (pb->requires_grad) {
          std::vector<T> d(res.grad.size());
          for (size_t i = 0; i < d.size(); ++i) d[i] = res.grad[i] * pa->data[i];
          detail::accumulate_grad<T>(*pb, d, "mul");
        }
      });
}

template <typename T>
inline Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  const auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * s;
  auto pa = a.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), "scale", {a},
      [pa, s](const TensorImpl<T>& res) {
        std::vector<T> d(res.grad.size());
        for (size_t i = 0; i < d.size(); ++i) d[i] = res.grad[i] * s;
        detail::accumulate_grad<T>(*pa, d, "scale");
      });
}

template <typename T>
inline Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (const T& v : a.data()) total += v;
  auto pa = a.impl();
  return detail::make_result<T>(
      {1}, {total}, "sum", {a},
      [pa](const TensorImpl<T>& res) {
        const T g = res.grad[0];
        std::vector<T> d(pa->data.size(), g);
        detail::accumulate_grad<T>(*pa, d, "sum");
      });
}

template <typename T>
inline Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] > T(0) ? da[i] : T(0);
  auto pa = a.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), "relu", {a},
      [pa](const TensorImpl<T>& res) {
        std::vector<T> d(res.grad.size());
        for (size_t i = 0; i < d.size(); ++i) {
          d[i] = pa->data[i] > T(0) ? res.grad[i] : T(0);
        }
        detail::accumulate_grad<T>(*pa, d, "relu");
      });
}

}  // namespace dil
