#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mgn {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

inline thread_local bool grad_mode = true;

}  // namespace detail

/// Disables tape recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Forward-pass FLOP tally keyed by op name. Ops report into the counter that
/// is active on the current thread (see FlopCounterScope).
struct FlopCounter {
  std::map<std::string, std::uint64_t> by_op;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [_, n] : by_op) t += n;
    return t;
  }
};

namespace detail {
inline thread_local FlopCounter* active_flops = nullptr;
}

class FlopCounterScope {
 public:
  explicit FlopCounterScope(FlopCounter& c) : prev_(detail::active_flops) { detail::active_flops = &c; }
  ~FlopCounterScope() { detail::active_flops = prev_; }
  FlopCounterScope(const FlopCounterScope&) = delete;
  FlopCounterScope& operator=(const FlopCounterScope&) = delete;

 private:
  FlopCounter* prev_;
};

inline void count_flops(const char* op, std::uint64_t n) {
  if (detail::active_flops) detail::active_flops->by_op[op] += n;
}

namespace debug {

/// Name of an op whose backward rule is deliberately corrupted (gradient
/// scaled by 1.5), read once from MGN_CORRUPT_BACKWARD. Used only by the
/// gradient-check sentinel test.
inline const std::string& corrupted_backward_op() {
  static const std::string name = [] {
    const char* v = std::getenv("MGN_CORRUPT_BACKWARD");
    return std::string(v ? v : "");
  }();
  return name;
}

}  // namespace debug

template <class T>
struct TensorImpl;

template <class T>
struct TapeNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  // Reads out.grad and accumulates into the parents' grad buffers.
  std::function<void(TensorImpl<T>& out)> backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool grad_populated = false;
  std::shared_ptr<TapeNode<T>> node;

  bool is_leaf() const { return node == nullptr; }

  /// Gradient buffer of this tensor, zero-allocated on first use. Empty span
  /// when the tensor does not take part in differentiation.
  std::span<T> grad_buffer() {
    if (!requires_grad) return {};
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Impl = TensorImpl<T>;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static BasicTensor from(Shape shape, std::vector<T> data) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return BasicTensor(std::move(impl));
  }

  static BasicTensor full(const Shape& shape, T value) {
    validate_shape(shape);
    return from(shape, std::vector<T>(shape_numel(shape), value));
  }
  static BasicTensor zeros(const Shape& shape) { return full(shape, T(0)); }
  static BasicTensor ones(const Shape& shape) { return full(shape, T(1)); }
  static BasicTensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// Mutable access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw DimensionError("item(): tensor " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
  }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on = true) {
    if (!impl_->is_leaf()) throw std::logic_error("set_requires_grad: only leaf tensors can be marked");
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return impl_->grad_populated; }

  /// dLoss/dThis from the last backward(); zeros when unreachable.
  std::span<const T> grad() const {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }

  void zero_grad() {
    impl_->grad.assign(impl_->data.size(), T(0));
    impl_->grad_populated = false;
  }

  const char* op() const { return impl_->node ? impl_->node->op : "leaf"; }

  /// Leaf copy with no tape history.
  BasicTensor detach() const { return from(shape(), impl_->data); }

  /// Detached copy converted to another scalar type.
  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(impl_->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(impl_->data[i]);
    return BasicTensor<U>::from(shape(), std::move(out));
  }

  void backward() const;

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  static void validate_shape(const Shape& s) {
    if (s.empty()) throw DimensionError("tensor: rank-0 shapes are not used; use shape [1] for scalars");
    for (auto e : s)
      if (e == 0) throw DimensionError("tensor: shape " + shape_str(s) + " has a zero extent");
  }

  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Scalar type of a tensor or of a container of tensors.
template <class X>
struct scalar_of {
  using type = typename X::value_type::value_type;
};
template <class T>
struct scalar_of<BasicTensor<T>> {
  using type = T;
};
template <class X>
using scalar_of_t = typename scalar_of<std::remove_cvref_t<X>>::type;

namespace detail {

/// Builds an op result. The tape node is recorded only when grad mode is on
/// and at least one input requires a gradient.
template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           std::vector<std::shared_ptr<TensorImpl<T>>> parents,
                           std::function<void(TensorImpl<T>&)> backward) {
  auto out = BasicTensor<T>::from(std::move(shape), std::move(data));
  if (!grad_mode) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (!any) return out;
  auto node = std::make_shared<TapeNode<T>>();
  node->op = op;
  node->parents = std::move(parents);
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

}  // namespace detail

template <class T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw DimensionError("backward(): loss must be a scalar, got " + shape_str(shape()));
  if (!impl_->requires_grad) throw std::logic_error("backward(): loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, idx] = stack.back();
    if (cur->node && idx < cur->node->parents.size()) {
      Impl* p = cur->node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }

  for (Impl* t : order) {
    if (t->is_leaf() && t->grad_populated) {
      throw std::logic_error("backward(): gradients already populated for a leaf " + shape_str(t->shape) +
                             "; call zero_grad() before a second backward pass");
    }
  }

  for (Impl* t : order)
    if (!t->is_leaf()) t->grad.assign(t->data.size(), T(0));
  for (Impl* t : order)
    if (t->is_leaf() && t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), T(0));
  impl_->grad[0] = T(1);

  const std::string& corrupt = debug::corrupted_backward_op();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* t = *it;
    if (t->is_leaf()) continue;
    if (!corrupt.empty() && corrupt == t->node->op)
      for (auto& g : t->grad) g *= T(1.5);
    t->node->backward(*t);
  }

  for (Impl* t : order) {
    if (t->is_leaf()) {
      t->grad_populated = true;
    } else {
      t->grad.clear();
      t->grad.shrink_to_fit();
    }
  }
}

}  // namespace mgn
