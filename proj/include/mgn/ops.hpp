#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <new>
#include <initializer_list>
#include <limits>
#include <numeric>

#include "mgn/tensor.hpp"

namespace mgn {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

inline constexpr std::size_t kScratchAlign = 64;

inline bool is_aligned(const void* p) { return reinterpret_cast<std::uintptr_t>(p) % kScratchAlign == 0; }

/// Per-thread, 64-byte aligned scratch that grows but never shrinks or re-zeroes.
template <class T, int Slot>
T* scratch(std::size_t n) {
  struct Buf {
    T* p = nullptr;
    std::size_t n = 0;
    ~Buf() { ::operator delete(p, std::align_val_t{kScratchAlign}); }
  };
  thread_local Buf buf;
  if (buf.n < n) {
    ::operator delete(buf.p, std::align_val_t{kScratchAlign});
    buf.p = static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kScratchAlign}));
    buf.n = n;
  }
  return buf.p;
}

template <class T, int Slot>
const T* staged(const T* src, std::size_t n) {
  if (is_aligned(src)) return src;
  T* s = scratch<T, Slot>(n);
  std::copy(src, src + n, s);
  return s;
}

/// c[m x n] (+)= op(a) * op(b) on row-major buffers, op being an optional
/// transpose. Eigen's kernels peel differently depending on pointer alignment,
/// so operands go through aligned scratch; without it two identical training
/// runs in one process can drift apart in the last bit.
template <class T>
void gemm(T* c, bool accumulate, const T* a, bool ta, const T* b, bool tb, std::size_t m, std::size_t k,
          std::size_t n) {
  const ConstMatMap<T> am(staged<T, 2>(a, m * k), ta ? k : m, ta ? m : k);
  const ConstMatMap<T> bm(staged<T, 3>(b, k * n), tb ? n : k, tb ? k : n);
  const bool in_place = !accumulate && is_aligned(c);
  T* cs = in_place ? c : scratch<T, 4>(m * n);
  MatMap<T> cm(cs, m, n);
  if (ta && tb) cm.noalias() = am.transpose() * bm.transpose();
  else if (ta) cm.noalias() = am.transpose() * bm;
  else if (tb) cm.noalias() = am * bm.transpose();
  else cm.noalias() = am * bm;
  if (in_place) return;
  if (accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] += cs[i];
  } else {
    std::copy(cs, cs + m * n, c);
  }
}

/// Strides that map an index of `out` onto a broadcast operand. The operand is
/// aligned to the leading axes and padded with trailing singleton axes; an
/// axis of extent 1 repeats.
inline std::vector<std::size_t> broadcast_strides(const Shape& out, const Shape& b, const char* op) {
  auto fail = [&] {
    return DimensionError(std::string(op) + ": shape " + shape_str(b) + " does not broadcast to " + shape_str(out));
  };
  if (b.size() > out.size()) throw fail();
  std::vector<std::size_t> padded(out.size(), 1);
  std::copy(b.begin(), b.end(), padded.begin());
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = out.size(); i-- > 0;) {
    if (padded[i] != out[i] && padded[i] != 1) throw fail();
    strides[i] = padded[i] == 1 ? 0 : s;
    s *= padded[i];
  }
  return strides;
}

/// Calls f(i, j) for every flat index i of `shape` and its broadcast index j.
template <class F>
void for_each_broadcast(const Shape& shape, const std::vector<std::size_t>& strides, F&& f) {
  const std::size_t rank = shape.size();
  const std::size_t inner = shape[rank - 1];
  const std::size_t inner_stride = strides[rank - 1];
  const std::size_t outer = shape_numel(shape) / inner;
  std::vector<std::size_t> counter(rank, 0);
  std::size_t base = 0;
  std::size_t i = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < inner; ++k) f(i++, base + k * inner_stride);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      base += strides[ax];
      if (++counter[ax] < shape[ax]) break;
      base -= strides[ax] * shape[ax];
      counter[ax] = 0;
    }
  }
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template <class T, class Fwd, class Bwd>
BasicTensor<T> unary(const BasicTensor<T>& a, const char* op, Fwd fwd, Bwd dfdx_given_y) {
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  count_flops(op, a.numel());
  auto ai = a.impl();
  return make_result<T>(a.shape(), std::move(out), op, {ai}, [ai, dfdx_given_y](TensorImpl<T>& o) {
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * dfdx_given_y(ai->data[i], o.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix product

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::gemm(out.data(), false, a.data().data(), false, b.data().data(), false, m, k, n);
  count_flops("matmul", 2 * m * n * k);
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>({m, n}, std::move(out), "matmul", {ai, bi}, [ai, bi, m, k, n](TensorImpl<T>& o) {
    const T* g = o.grad.data();
    if (auto ga = ai->grad_buffer(); !ga.empty()) detail::gemm(ga.data(), true, g, false, bi->data.data(), true, m, n, k);
    if (auto gb = bi->grad_buffer(); !gb.empty()) detail::gemm(gb.data(), true, ai->data.data(), true, g, false, k, m, n);
  });
}

// ---------------------------------------------------------------------------
// Elementwise ops. Binary ops broadcast the second operand only.

enum class EwKind { add, sub, mul, div, pow };

template <class T>
BasicTensor<T> ew_op(EwKind kind, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  static constexpr const char* names[] = {"add", "sub", "mul", "div", "pow"};
  const char* op = names[static_cast<int>(kind)];
  const auto strides = detail::broadcast_strides(a.shape(), b.shape(), op);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(a.numel());
  switch (kind) {
    case EwKind::add: detail::for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { out[i] = x[i] + y[j]; }); break;
    case EwKind::sub: detail::for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { out[i] = x[i] - y[j]; }); break;
    case EwKind::mul: detail::for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { out[i] = x[i] * y[j]; }); break;
    case EwKind::div: detail::for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) { out[i] = x[i] / y[j]; }); break;
    case EwKind::pow: {
      bool bad = false;
      detail::for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t j) {
        bad = bad || (x[i] < T(0) && std::nearbyint(y[j]) != y[j]);
        out[i] = std::pow(x[i], y[j]);
      });
      if (bad) throw DomainError("pow: negative base with non-integer exponent");
      break;
    }
  }
  count_flops(op, a.numel());
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), op, {ai, bi}, [ai, bi, strides, kind](TensorImpl<T>& o) {
    auto ga = ai->grad_buffer();
    auto gb = bi->grad_buffer();
    const auto& x = ai->data;
    const auto& y = bi->data;
    const auto& g = o.grad;
    const bool need_a = !ga.empty(), need_b = !gb.empty();
    auto run = [&](auto da, auto db) {
      if (need_a && need_b)
        detail::for_each_broadcast(ai->shape, strides, [&](std::size_t i, std::size_t j) {
          ga[i] += da(i, j);
          gb[j] += db(i, j);
        });
      else if (need_a)
        detail::for_each_broadcast(ai->shape, strides, [&](std::size_t i, std::size_t j) { ga[i] += da(i, j); });
      else if (need_b)
        detail::for_each_broadcast(ai->shape, strides, [&](std::size_t i, std::size_t j) { gb[j] += db(i, j); });
    };
    switch (kind) {
      case EwKind::add:
        run([&](std::size_t i, std::size_t) { return g[i]; }, [&](std::size_t i, std::size_t) { return g[i]; });
        break;
      case EwKind::sub:
        run([&](std::size_t i, std::size_t) { return g[i]; }, [&](std::size_t i, std::size_t) { return -g[i]; });
        break;
      case EwKind::mul:
        run([&](std::size_t i, std::size_t j) { return g[i] * y[j]; },
            [&](std::size_t i, std::size_t) { return g[i] * x[i]; });
        break;
      case EwKind::div:
        run([&](std::size_t i, std::size_t j) { return g[i] / y[j]; },
            [&](std::size_t i, std::size_t j) { return -g[i] * o.data[i] / y[j]; });
        break;
      case EwKind::pow:
        run([&](std::size_t i, std::size_t j) {
              return x[i] == T(0) && y[j] < T(1) ? T(0) : g[i] * y[j] * std::pow(x[i], y[j] - T(1));
            },
            [&](std::size_t i, std::size_t) { return x[i] > T(0) ? g[i] * o.data[i] * std::log(x[i]) : T(0); });
        break;
    }
  });
}

template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) { return ew_op(EwKind::add, a, b); }
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) { return ew_op(EwKind::sub, a, b); }
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) { return ew_op(EwKind::mul, a, b); }
template <class T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) { return ew_op(EwKind::div, a, b); }
template <class T> BasicTensor<T> pow(const BasicTensor<T>& a, const BasicTensor<T>& b) { return ew_op(EwKind::pow, a, b); }

template <class T> BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <class T> BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <class T> BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, double s) {
  const T c = static_cast<T>(s);
  return detail::unary(a, "scale", [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, double s) {
  const T c = static_cast<T>(s);
  return detail::unary(a, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> pow(const BasicTensor<T>& a, double e) {
  const T p = static_cast<T>(e);
  if (std::nearbyint(p) != p)
    for (auto v : a.data())
      if (v < T(0)) throw DomainError("pow: negative base with non-integer exponent");
  return detail::unary(a, "pow", [p](T v) { return std::pow(v, p); },
                       [p](T x, T) { return x == T(0) && p < T(1) ? T(0) : p * std::pow(x, p - T(1)); });
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return detail::unary(a, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
BasicTensor<T> abs(const BasicTensor<T>& a) {
  // Subgradient 0 at the kink.
  return detail::unary(a, "abs", [](T v) { return std::abs(v); },
                       [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, tanh, sigmoid, softplus };

namespace detail {
template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return detail::unary(a, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  return detail::unary(a, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  return detail::unary(a, "sigmoid", [](T v) { return detail::stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
BasicTensor<T> softplus(const BasicTensor<T>& a) {
  // log(1 + e^x), linear above 20 where the correction is below float resolution.
  return detail::unary(
      a, "softplus", [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
      [](T x, T) { return detail::stable_sigmoid(x); });
}

template <class T>
BasicTensor<T> activation(Activation kind, const BasicTensor<T>& a) {
  switch (kind) {
    case Activation::relu: return relu(a);
    case Activation::tanh: return tanh(a);
    case Activation::sigmoid: return sigmoid(a);
    case Activation::softplus: return softplus(a);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)

enum class ReduceKind { sum, mean };

template <class T>
BasicTensor<T> reduce(ReduceKind kind, const BasicTensor<T>& x, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (auto ax : axes)
    if (ax >= x.rank())
      throw DimensionError("reduce: axis " + std::to_string(ax) + " out of range for " + shape_str(x.shape()));
  if (axes.empty()) return scale(x, 1.0);

  const Shape& in = x.shape();
  Shape out_shape;
  Shape kept(in.size(), 1);
  std::size_t count = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (std::binary_search(axes.begin(), axes.end(), i)) {
      count *= in[i];
    } else {
      out_shape.push_back(in[i]);
      kept[i] = in[i];
    }
  }
  if (out_shape.empty()) out_shape = {1};
  // Reuse the broadcast machinery: the kept shape broadcasts back onto `in`.
  const auto strides = detail::broadcast_strides(in, kept, "reduce");
  std::vector<double> acc(shape_numel(out_shape), 0.0);
  const auto v = x.data();
  detail::for_each_broadcast(in, strides, [&](std::size_t i, std::size_t j) { acc[j] += static_cast<double>(v[i]); });
  const double norm = kind == ReduceKind::mean ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<T> out(acc.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i] * norm);
  count_flops(kind == ReduceKind::mean ? "mean" : "sum", x.numel());
  auto xi = x.impl();
  const T scale_back = static_cast<T>(norm);
  return detail::make_result<T>(std::move(out_shape), std::move(out), kind == ReduceKind::mean ? "mean" : "sum", {xi},
                                [xi, strides, scale_back](TensorImpl<T>& o) {
                                  auto gx = xi->grad_buffer();
                                  detail::for_each_broadcast(xi->shape, strides, [&](std::size_t i, std::size_t j) {
                                    gx[i] += o.grad[j] * scale_back;
                                  });
                                });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::vector<std::size_t> axes) {
  return reduce(ReduceKind::sum, x, std::move(axes));
}
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::vector<std::size_t> axes) {
  return reduce(ReduceKind::mean, x, std::move(axes));
}
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  std::vector<std::size_t> all(x.rank());
  std::iota(all.begin(), all.end(), 0);
  return reduce(ReduceKind::sum, x, all);
}
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  std::vector<std::size_t> all(x.rank());
  std::iota(all.begin(), all.end(), 0);
  return reduce(ReduceKind::mean, x, all);
}

// ---------------------------------------------------------------------------
// Softmax

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const auto v = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(v[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      const T inv = static_cast<T>(1.0 / z);
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] *= inv;
    }
  }
  count_flops("softmax", 3 * x.numel());
  auto xi = x.impl();
  return detail::make_result<T>(s, std::move(out), "softmax", {xi}, [xi, outer, inner, n](TensorImpl<T>& o) {
    auto gx = xi->grad_buffer();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = a * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += static_cast<double>(o.grad[base + k * inner]) * o.data[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          gx[idx] += o.data[idx] * (o.grad[idx] - static_cast<T>(dot));
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xi = x.impl();
  return detail::make_result<T>(std::move(shape), x.vec(), "reshape", {xi}, [xi](TensorImpl<T>& o) {
    auto gx = xi->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
  });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(x.shape()));
  const auto r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  auto xi = x.impl();
  return detail::make_result<T>({c, r}, std::move(out), "transpose", {xi}, [xi, r, c](TensorImpl<T>& o) {
    auto gx = xi->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += o.grad[j * r + i];
  });
}

/// Repeats `x` onto `shape` using the broadcast rule of ew_op.
template <class T>
BasicTensor<T> broadcast_to(const BasicTensor<T>& x, const Shape& shape) {
  const auto strides = detail::broadcast_strides(shape, x.shape(), "broadcast_to");
  std::vector<T> out(shape_numel(shape));
  const auto v = x.data();
  detail::for_each_broadcast(shape, strides, [&](std::size_t i, std::size_t j) { out[i] = v[j]; });
  auto xi = x.impl();
  return detail::make_result<T>(shape, std::move(out), "broadcast_to", {xi}, [xi, strides](TensorImpl<T>& o) {
    auto gx = xi->grad_buffer();
    detail::for_each_broadcast(o.shape, strides, [&](std::size_t i, std::size_t j) { gx[j] += o.grad[i]; });
  });
}

/// Sub-range [start, start+len) of axis `axis`.
template <class T>
BasicTensor<T> narrow(const BasicTensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.rank() || len == 0 || start + len > x.dim(axis))
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") invalid on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  s[axis] = len;
  std::vector<T> out(outer * len * inner);
  const auto v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(v.begin() + (o * n + start) * inner, len * inner, out.begin() + o * len * inner);
  auto xi = x.impl();
  return detail::make_result<T>(std::move(s), std::move(out), "narrow", {xi},
                                [xi, outer, inner, n, start, len](TensorImpl<T>& o) {
                                  auto gx = xi->grad_buffer();
                                  for (std::size_t a = 0; a < outer; ++a)
                                    for (std::size_t k = 0; k < len * inner; ++k)
                                      gx[(a * n + start) * inner + k] += o.grad[a * len * inner + k];
                                });
}

/// Concatenation along `axis`; all other extents must agree.
template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape s = parts[0].shape();
  if (axis >= s.size()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != s.size()) throw DimensionError("concat: rank mismatch " + shape_str(ps) + " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && ps[i] != s[i]) throw DimensionError("concat: shape mismatch " + shape_str(ps) + " vs " + shape_str(s));
    total += ps[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  s[axis] = total;
  std::vector<T> out(shape_numel(s));
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.dim(axis);
    const auto v = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + o * n * inner, n * inner, out.begin() + (o * total + off) * inner);
    impls.push_back(p.impl());
    offsets.push_back(off);
    off += n;
  }
  return detail::make_result<T>(std::move(s), std::move(out), "concat", impls,
                                [impls, offsets, outer, inner, total, axis](TensorImpl<T>& o) {
                                  for (std::size_t p = 0; p < impls.size(); ++p) {
                                    auto g = impls[p]->grad_buffer();
                                    if (g.empty()) continue;
                                    const std::size_t n = impls[p]->shape[axis];
                                    for (std::size_t a = 0; a < outer; ++a)
                                      for (std::size_t k = 0; k < n * inner; ++k)
                                        g[a * n * inner + k] += o.grad[(a * total + offsets[p]) * inner + k];
                                  }
                                });
}

/// Clamp without gradient (export path only).
template <class T>
BasicTensor<T> clamp_detached(const BasicTensor<T>& x, T lo, T hi) {
  std::vector<T> out(x.vec());
  for (auto& v : out) v = std::clamp(v, lo, hi);
  return BasicTensor<T>::from(x.shape(), std::move(out));
}

}  // namespace mgn
