#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "fsar/tensor/tensor.hpp"

namespace fsar {

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t da = i + a.size() >= n ? a[i + a.size() - n] : 1;
    const std::size_t db = i + b.size() >= n ? b[i + b.size() - n] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

namespace detail {

/// Element strides of `in` viewed through the broadcast `out` shape (0 on
/// broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t n = out.size();
  std::vector<std::size_t> strides(n, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t d_in = in.size() - 1 - k;
    const std::size_t d_out = n - 1 - k;
    if (in[d_in] != 1) strides[d_out] = stride;
    stride *= in[d_in];
  }
  return strides;
}

/// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void broadcast_for_each(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t total = shape_numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t n = out.size();
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t inner = out[n - 1];
  const std::size_t ia = sa[n - 1], ib = sb[n - 1];
  std::vector<std::size_t> idx(n, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
    // advance the outer counter
    for (std::size_t d = n - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  NdArray<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xv[i]);
  return make_result<T>(std::move(y), {&x}, [deriv](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out = broadcast_shapes(a.shape(), b.shape());
  NdArray<T> y(out);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::broadcast_for_each(out, a.shape(), b.shape(),
                             [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = av[ia] + bv[ib]; });
  return make_result<T>(std::move(y), {&a, &b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.grad_ref();
      detail::broadcast_for_each(g.shape(), pa.value.shape(), pb.value.shape(),
                                 [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_ref();
      detail::broadcast_for_each(g.shape(), pa.value.shape(), pb.value.shape(),
                                 [&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] += g[i]; });
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out = broadcast_shapes(a.shape(), b.shape());
  NdArray<T> y(out);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::broadcast_for_each(out, a.shape(), b.shape(),
                             [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = av[ia] - bv[ib]; });
  return make_result<T>(std::move(y), {&a, &b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.grad_ref();
      detail::broadcast_for_each(g.shape(), pa.value.shape(), pb.value.shape(),
                                 [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_ref();
      detail::broadcast_for_each(g.shape(), pa.value.shape(), pb.value.shape(),
                                 [&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] -= g[i]; });
    }
  });
}

/// Hadamard product with broadcasting.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out = broadcast_shapes(a.shape(), b.shape());
  NdArray<T> y(out);
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::broadcast_for_each(out, a.shape(), b.shape(),
                             [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = av[ia] * bv[ib]; });
  return make_result<T>(std::move(y), {&a, &b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.grad_ref();
      detail::broadcast_for_each(g.shape(), pa.value.shape(), pb.value.shape(),
                                 [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * pb.value[ib]; });
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_ref();
      detail::broadcast_for_each(g.shape(), pa.value.shape(), pb.value.shape(),
                                 [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * pa.value[ia]; });
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T{-1});
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return T{0.5} * v * (T{1} + std::erf(v / std::numbers::sqrt2_v<T>)); },
      [](T v, T) {
        const T cdf = T{0.5} * (T{1} + std::erf(v / std::numbers::sqrt2_v<T>));
        const T pdf = std::exp(T{-0.5} * v * v) / std::sqrt(T{2} * std::numbers::pi_v<T>);
        return cdf + v * pdf;
      });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  NdArray<T> y = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(y), {&x}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

/// Swaps the last two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.ndim() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  Shape out = x.shape();
  const std::size_t r = out[out.size() - 2], c = out[out.size() - 1];
  std::swap(out[out.size() - 2], out[out.size() - 1]);
  const std::size_t batch = x.size() / (r * c);
  NdArray<T> y(out);
  const auto& xv = x.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) y[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
  return make_result<T>(std::move(y), {&x}, [batch, r, c](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
  });
}

/// Contiguous sub-range [start, start+length) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  if (start + length > x.shape()[ax] || length == 0) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis of length " + std::to_string(x.shape()[ax]));
  }
  const AxisLayout L(x.shape(), ax);
  Shape out = x.shape();
  out[ax] = length;
  NdArray<T> y(out);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t i = 0; i < length; ++i)
      for (std::size_t j = 0; j < L.inner; ++j)
        y[(o * length + i) * L.inner + j] = xv[(o * L.length + start + i) * L.inner + j];
  return make_result<T>(std::move(y), {&x}, [L, start, length](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t i = 0; i < length; ++i)
        for (std::size_t j = 0; j < L.inner; ++j)
          gx[(o * L.length + start + i) * L.inner + j] += self.grad[(o * length + i) * L.inner + j];
  });
}

template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<std::size_t>& sizes, int axis) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (total != x.shape()[ax]) {
    throw DimensionError("split sizes sum to " + std::to_string(total) + " but axis has length " +
                         std::to_string(x.shape()[ax]));
  }
  std::vector<Tensor<T>> parts;
  std::size_t start = 0;
  for (auto s : sizes) {
    parts.push_back(slice(x, static_cast<int>(ax), start, s));
    start += s;
  }
  return parts;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat of an empty list");
  const std::size_t ax = normalize_axis(axis, xs[0].ndim());
  Shape out = xs[0].shape();
  out[ax] = 0;
  for (const auto& t : xs) {
    Shape s = t.shape();
    if (s.size() != out.size()) throw DimensionError("concat rank mismatch: " + shape_str(xs[0].shape()) + " vs " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != xs[0].shape()[d]) {
        throw DimensionError("concat shape mismatch: " + shape_str(xs[0].shape()) + " vs " + shape_str(s));
      }
    }
    out[ax] += s[ax];
  }
  const AxisLayout L(out, ax);
  NdArray<T> y(out);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t len = t.shape()[ax];
    const auto& tv = t.value();
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < L.inner; ++j) y[(o * L.length + off + i) * L.inner + j] = tv[(o * len + i) * L.inner + j];
    off += len;
  }
  return make_result<T>(std::move(y), xs, [L, offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& gx = p.grad_ref();
      const std::size_t len = gx.size() / (L.outer * L.inner);
      for (std::size_t o = 0; o < L.outer; ++o)
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t j = 0; j < L.inner; ++j)
            gx[(o * len + i) * L.inner + j] += self.grad[(o * L.length + offsets[k] + i) * L.inner + j];
    }
  });
}

/// Gathers sub-arrays along axis 0; repeated indices accumulate gradient.
template <class T>
Tensor<T> take(const Tensor<T>& x, const std::vector<std::size_t>& indices) {
  if (x.ndim() < 1) throw DimensionError("take needs rank >= 1");
  const std::size_t rows = x.shape()[0];
  const std::size_t stride = rows ? x.size() / rows : 0;
  for (auto i : indices) {
    if (i >= rows) throw DimensionError("take index " + std::to_string(i) + " out of range " + std::to_string(rows));
  }
  Shape out = x.shape();
  out[0] = indices.size();
  NdArray<T> y(out);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * stride), stride,
                y.data().begin() + static_cast<std::ptrdiff_t>(r * stride));
  return make_result<T>(std::move(y), {&x}, [indices, stride](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t j = 0; j < stride; ++j) gx[indices[r] * stride + j] += self.grad[r * stride + j];
  });
}

/// out[b] = x[b, index[b]] for a rank-2 input.
template <class T>
Tensor<T> pick(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  if (x.ndim() != 2 || x.shape()[0] != index.size()) {
    throw DimensionError("pick expects [B,N] with B indices, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[1];
  NdArray<T> y(Shape{index.size()});
  for (std::size_t b = 0; b < index.size(); ++b) {
    if (index[b] >= n) throw DimensionError("pick index out of range");
    y[b] = x.value()[b * n + index[b]];
  }
  return make_result<T>(std::move(y), {&x}, [index, n](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t b = 0; b < index.size(); ++b) gx[b * n + index[b]] += self.grad[b];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim = false) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisLayout L(x.shape(), ax);
  Shape out = x.shape();
  if (keepdim) out[ax] = 1;
  else out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
  NdArray<T> y(out);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t i = 0; i < L.length; ++i)
      for (std::size_t j = 0; j < L.inner; ++j) y[o * L.inner + j] += xv[(o * L.length + i) * L.inner + j];
  return make_result<T>(std::move(y), {&x}, [L](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t i = 0; i < L.length; ++i)
        for (std::size_t j = 0; j < L.inner; ++j) gx[(o * L.length + i) * L.inner + j] += self.grad[o * L.inner + j];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim = false) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  return scale(sum(x, axis, keepdim), T{1} / static_cast<T>(x.shape()[ax]));
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return make_result<T>(NdArray<T>::scalar(acc), {&x}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T{1} / static_cast<T>(x.size()));
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisLayout L(x.shape(), ax);
  NdArray<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t j = 0; j < L.inner; ++j) {
      auto at = [&](std::size_t i) { return (o * L.length + i) * L.inner + j; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < L.length; ++i) mx = std::max(mx, xv[at(i)]);
      T z{0};
      for (std::size_t i = 0; i < L.length; ++i) z += (y[at(i)] = std::exp(xv[at(i)] - mx));
      for (std::size_t i = 0; i < L.length; ++i) y[at(i)] /= z;
    }
  return make_result<T>(std::move(y), {&x}, [L](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    const auto& yv = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t j = 0; j < L.inner; ++j) {
        auto at = [&](std::size_t i) { return (o * L.length + i) * L.inner + j; };
        T dot{0};
        for (std::size_t i = 0; i < L.length; ++i) dot += g[at(i)] * yv[at(i)];
        for (std::size_t i = 0; i < L.length; ++i) gx[at(i)] += yv[at(i)] * (g[at(i)] - dot);
      }
  });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis = -1) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisLayout L(x.shape(), ax);
  NdArray<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t j = 0; j < L.inner; ++j) {
      auto at = [&](std::size_t i) { return (o * L.length + i) * L.inner + j; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < L.length; ++i) mx = std::max(mx, xv[at(i)]);
      T z{0};
      for (std::size_t i = 0; i < L.length; ++i) z += std::exp(xv[at(i)] - mx);
      const T lz = mx + std::log(z);
      for (std::size_t i = 0; i < L.length; ++i) y[at(i)] = xv[at(i)] - lz;
    }
  return make_result<T>(std::move(y), {&x}, [L](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    const auto& yv = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t j = 0; j < L.inner; ++j) {
        auto at = [&](std::size_t i) { return (o * L.length + i) * L.inner + j; };
        T gs{0};
        for (std::size_t i = 0; i < L.length; ++i) gs += g[at(i)];
        for (std::size_t i = 0; i < L.length; ++i) gx[at(i)] += g[at(i)] - std::exp(yv[at(i)]) * gs;
      }
  });
}

/// Euclidean norm along `axis` (axis removed). Gradient at a zero vector is 0.
template <class T>
Tensor<T> l2_norm(const Tensor<T>& x, int axis = -1) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisLayout L(x.shape(), ax);
  Shape out = x.shape();
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
  NdArray<T> y(out);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t j = 0; j < L.inner; ++j) {
      T s{0};
      for (std::size_t i = 0; i < L.length; ++i) {
        const T v = xv[(o * L.length + i) * L.inner + j];
        s += v * v;
      }
      y[o * L.inner + j] = std::sqrt(s);
    }
  return make_result<T>(std::move(y), {&x}, [L](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t j = 0; j < L.inner; ++j) {
        const T n = self.value[o * L.inner + j];
        if (n == T{0}) continue;
        const T g = self.grad[o * L.inner + j] / n;
        for (std::size_t i = 0; i < L.length; ++i) {
          const std::size_t k = (o * L.length + i) * L.inner + j;
          gx[k] += g * p.value[k];
        }
      }
  });
}

/// Scales every vector along `axis` to unit Euclidean length.
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x, int axis = -1) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisLayout L(x.shape(), ax);
  NdArray<T> y(x.shape());
  std::vector<T> norms(L.outer * L.inner);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t j = 0; j < L.inner; ++j) {
      T s{0};
      for (std::size_t i = 0; i < L.length; ++i) {
        const T v = xv[(o * L.length + i) * L.inner + j];
        s += v * v;
      }
      const T n = std::sqrt(s);
      if (!(n > T{0}) || !std::isfinite(n)) throw NumericError("cannot normalize a zero or non-finite vector");
      norms[o * L.inner + j] = n;
      for (std::size_t i = 0; i < L.length; ++i) {
        const std::size_t k = (o * L.length + i) * L.inner + j;
        y[k] = xv[k] / n;
      }
    }
  return make_result<T>(std::move(y), {&x}, [L, norms = std::move(norms)](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gx = p.grad_ref();
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t j = 0; j < L.inner; ++j) {
        T dot{0};
        for (std::size_t i = 0; i < L.length; ++i) {
          const std::size_t k = (o * L.length + i) * L.inner + j;
          dot += self.grad[k] * self.value[k];
        }
        const T n = norms[o * L.inner + j];
        for (std::size_t i = 0; i < L.length; ++i) {
          const std::size_t k = (o * L.length + i) * L.inner + j;
          gx[k] += (self.grad[k] - self.value[k] * dot) / n;
        }
      }
  });
}

/// Normalizes over the last axis, then applies per-channel gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t c = x.shape().back();
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw DimensionError("layer_norm gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / c;
  NdArray<T> y(x.shape());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T mu{0};
    for (std::size_t j = 0; j < c; ++j) mu += xv[r * c + j];
    mu /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) {
      const T d = xv[r * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xv[r * c + j] - mu) * is;
      xhat[r * c + j] = h;
      y[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(std::move(y), {&x, &gain, &bias},
                        [c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pg = *self.parents[1];
                          auto& pb = *self.parents[2];
                          const auto& g = self.grad;
                          if (pg.requires_grad) {
                            auto& gg = pg.grad_ref();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
                          }
                          if (pb.requires_grad) {
                            auto& gb = pb.grad_ref();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
                          }
                          if (px.requires_grad) {
                            auto& gx = px.grad_ref();
                            const auto& gain_v = pg.value;
                            for (std::size_t r = 0; r < rows; ++r) {
                              T m1{0}, m2{0};
                              for (std::size_t j = 0; j < c; ++j) {
                                const T dh = g[r * c + j] * gain_v[j];
                                m1 += dh;
                                m2 += dh * xhat[r * c + j];
                              }
                              m1 /= static_cast<T>(c);
                              m2 /= static_cast<T>(c);
                              for (std::size_t j = 0; j < c; ++j) {
                                const T dh = g[r * c + j] * gain_v[j];
                                gx[r * c + j] += inv_std[r] * (dh - m1 - xhat[r * c + j] * m2);
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

/// Batched matrix product a[..., m, k] · b[..., k, n] with broadcast batch axes.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.ndim() - 2], k = a.shape()[a.ndim() - 1];
  const std::size_t k2 = b.shape()[b.ndim() - 2], n = b.shape()[b.ndim() - 1];
  if (k != k2) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shapes(a_batch, b_batch);
  std::vector<std::size_t> off_a, off_b;
  detail::broadcast_for_each(batch, a_batch, b_batch, [&](std::size_t, std::size_t ia, std::size_t ib) {
    off_a.push_back(ia * m * k);
    off_b.push_back(ib * k * n);
  });
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);
  NdArray<T> y(out);
  const T* av = a.value().data().data();
  const T* bv = b.value().data().data();
  T* yv = y.data().data();
  for (std::size_t s = 0; s < off_a.size(); ++s) {
    const T* A = av + off_a[s];
    const T* B = bv + off_b[s];
    T* C = yv + s * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = A[i * k + p];
        const T* Brow = B + p * n;
        T* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += aip * Brow[j];
      }
  }
  return make_result<T>(std::move(y), {&a, &b}, [m, k, n, off_a, off_b](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T* G = self.grad.data().data();
    if (pa.requires_grad) {
      T* GA = pa.grad_ref().data().data();
      const T* bv = pb.value.data().data();
      for (std::size_t s = 0; s < off_a.size(); ++s) {
        const T* B = bv + off_b[s];
        const T* Gs = G + s * m * n;
        T* GAs = GA + off_a[s];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T acc{0};
            const T* Brow = B + p * n;
            const T* Grow = Gs + i * n;
            for (std::size_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            GAs[i * k + p] += acc;
          }
      }
    }
    if (pb.requires_grad) {
      T* GB = pb.grad_ref().data().data();
      const T* av = pa.value.data().data();
      for (std::size_t s = 0; s < off_a.size(); ++s) {
        const T* A = av + off_a[s];
        const T* Gs = G + s * m * n;
        T* GBs = GB + off_b[s];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T aip = A[i * k + p];
            const T* Grow = Gs + i * n;
            T* GBrow = GBs + p * n;
            for (std::size_t j = 0; j < n; ++j) GBrow[j] += aip * Grow[j];
          }
      }
    }
  });
}

/// Convenience constant from a shape and fill value.
template <class T>
Tensor<T> full(Shape shape, T value) {
  return Tensor<T>(NdArray<T>(std::move(shape), value));
}

}  // namespace fsar
