#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "fsar/tensor/ops.hpp"

namespace fsar {

/// Consistency distance: mean over the P tokens of the per-token Euclidean
/// distance. a, b: [..., P, C] -> [...].
template <class T>
Tensor<T> con_dis(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("con_dis shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.ndim() < 2) throw DimensionError("con_dis expects [..., P, C], got " + shape_str(a.shape()));
  return mean(l2_norm(sub(a, b), -1), -1);
}

namespace detail {

/// Smooth ordered-alignment DP over one Tq x Ts cost matrix.
///
/// The support axis is padded with a zero-cost column on each side (width
/// Ts + 2). Row 0 is a running sum. For rows l >= 1 the leading pad column
/// stays 0, interior column m takes min over (l-1, m-1) and (l, m-1), and the
/// first real column and the trailing pad column additionally accept the
/// vertical move from (l-1, m). min is replaced by -gamma * logsumexp(-x/gamma).
template <class T>
struct OtamDp {
  std::size_t rows = 0, width = 0;
  std::vector<T> cum;              // rows x width
  std::vector<T> weight;           // rows x width x 3, softmin weights of preds
  std::vector<std::int8_t> preds;  // rows x width x 3 encoded predecessor kind

  enum : std::int8_t { kNone = 0, kDiag = 1, kLeft = 2, kUp = 3 };

  T run(const T* cost, std::size_t tq, std::size_t ts, std::size_t row_stride, std::size_t col_stride, T gamma) {
    rows = tq;
    width = ts + 2;
    cum.assign(rows * width, T{0});
    weight.assign(rows * width * 3, T{0});
    preds.assign(rows * width * 3, kNone);
    auto D = [&](std::size_t l, std::size_t m) -> T {
      if (m == 0 || m == width - 1) return T{0};
      return cost[l * row_stride + (m - 1) * col_stride];
    };
    for (std::size_t m = 1; m < width; ++m) {
      cum[m] = D(0, m) + cum[m - 1];
      preds[m * 3] = kLeft;
      weight[m * 3] = T{1};
    }
    for (std::size_t l = 1; l < rows; ++l) {
      for (std::size_t m = 1; m < width; ++m) {
        std::int8_t kinds[3];
        int count = 0;
        kinds[count++] = kDiag;
        kinds[count++] = kLeft;
        if (m == 1 || m == width - 1) kinds[count++] = kUp;
        T vals[3];
        T lo = std::numeric_limits<T>::infinity();
        for (int q = 0; q < count; ++q) {
          vals[q] = cum[pred_index(l, m, kinds[q])];
          lo = std::min(lo, vals[q]);
        }
        T z{0};
        for (int q = 0; q < count; ++q) z += std::exp(-(vals[q] - lo) / gamma);
        const T softmin = lo - gamma * std::log(z);
        cum[l * width + m] = D(l, m) + softmin;
        for (int q = 0; q < count; ++q) {
          preds[(l * width + m) * 3 + q] = kinds[q];
          weight[(l * width + m) * 3 + q] = std::exp(-(vals[q] - softmin) / gamma);
        }
      }
    }
    return cum[rows * width - 1];
  }

  /// Accumulates d(output)/d(cost) * upstream into grad_cost.
  void backward(T upstream, T* grad_cost, std::size_t row_stride, std::size_t col_stride) const {
    std::vector<T> e(rows * width, T{0});
    e[rows * width - 1] = upstream;
    for (std::size_t idx = rows * width; idx-- > 0;) {
      const std::size_t l = idx / width, m = idx % width;
      const T el = e[idx];
      if (el == T{0} || m == 0) continue;
      if (m != width - 1) grad_cost[l * row_stride + (m - 1) * col_stride] += el;
      for (int q = 0; q < 3; ++q) {
        const auto kind = preds[idx * 3 + q];
        if (kind == kNone) break;
        e[pred_index(l, m, kind)] += el * weight[idx * 3 + q];
      }
    }
  }

  std::size_t pred_index(std::size_t l, std::size_t m, std::int8_t kind) const {
    switch (kind) {
      case kDiag: return (l - 1) * width + (m - 1);
      case kLeft: return l * width + (m - 1);
      default: return (l - 1) * width + m;
    }
  }
};

}  // namespace detail

/// Smooth OTAM value for every cost matrix in cost[..., Tq, Ts] -> [...].
/// With `transposed` the DP runs on each matrix's transpose.
template <class T>
Tensor<T> soft_otam(const Tensor<T>& cost, T gamma, bool transposed = false) {
  if (cost.ndim() < 2) throw DimensionError("soft_otam expects [..., Tq, Ts], got " + shape_str(cost.shape()));
  if (!(gamma > T{0})) throw ContractError("soft_otam smoothing must be positive");
  const std::size_t r = cost.shape()[cost.ndim() - 2], c = cost.shape()[cost.ndim() - 1];
  if (r == 0 || c == 0) throw ContractError("soft_otam needs at least one frame per sequence");
  const Shape out(cost.shape().begin(), cost.shape().end() - 2);
  const std::size_t batch = shape_numel(out);
  const std::size_t tq = transposed ? c : r, ts = transposed ? r : c;
  const std::size_t row_stride = transposed ? 1 : c, col_stride = transposed ? c : 1;
  NdArray<T> y(out);
  std::vector<detail::OtamDp<T>> dps(batch);
  const T* cv = cost.value().data().data();
  for (std::size_t b = 0; b < batch; ++b) y[b] = dps[b].run(cv + b * r * c, tq, ts, row_stride, col_stride, gamma);
  const bool keep = g_grad_enabled && cost.requires_grad();
  if (!keep) dps.clear();
  return make_result<T>(std::move(y), {&cost}, [dps = std::move(dps), r, c, row_stride, col_stride](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_ref().data().data();
    for (std::size_t b = 0; b < dps.size(); ++b) dps[b].backward(self.grad[b], g + b * r * c, row_stride, col_stride);
  });
}

/// Unit direction of each layer-normalized frame. Cosine ignores the layernorm
/// scale, so centering over channels is all that remains of it.
template <class T>
Tensor<T> frame_directions(const Tensor<T>& x) {
  return l2_normalize(sub(x, mean(x, -1, true)), -1);
}

/// Pairwise frame costs 1 - cos(LN a_i, LN b_j): a[..., Tq, C], b[..., Ts, C] -> [..., Tq, Ts].
template <class T>
Tensor<T> cosine_cost(const Tensor<T>& a, const Tensor<T>& b) {
  return add_scalar(neg(matmul(frame_directions(a), transpose(frame_directions(b)))), T{1});
}

struct SeqDisOptions {
  double gamma = 0.1;
  /// Average the DP over the cost matrix and its transpose.
  bool bidirectional = true;
};

template <class T>
Tensor<T> otam_from_cost(const Tensor<T>& cost, const SeqDisOptions& opt) {
  const T gamma = static_cast<T>(opt.gamma);
  const Tensor<T> forward = soft_otam(cost, gamma, false);
  if (!opt.bidirectional) return forward;
  return scale(add(forward, soft_otam(cost, gamma, true)), T{0.5});
}

/// Ordered temporal alignment distance between two frame sequences [T, C].
template <class T>
Tensor<T> seq_dis(const Tensor<T>& query, const Tensor<T>& support, const SeqDisOptions& opt = {}) {
  if (query.ndim() != 2 || support.ndim() != 2 || query.shape()[1] != support.shape()[1]) {
    throw DimensionError("seq_dis expects [Tq,C] and [Ts,C], got " + shape_str(query.shape()) + " and " +
                         shape_str(support.shape()));
  }
  return otam_from_cost(cosine_cost(query, support), opt);
}

/// All query/support pairs: queries [Q, T, C], supports [S, T, C] -> [Q, S].
template <class T>
Tensor<T> seq_dis_matrix(const Tensor<T>& queries, const Tensor<T>& supports, const SeqDisOptions& opt = {}) {
  if (queries.ndim() != 3 || supports.ndim() != 3 || queries.shape()[2] != supports.shape()[2]) {
    throw DimensionError("seq_dis_matrix expects [Q,T,C] and [S,T,C], got " + shape_str(queries.shape()) + " and " +
                         shape_str(supports.shape()));
  }
  const std::size_t nq = queries.shape()[0], ns = supports.shape()[0];
  const std::size_t tq = queries.shape()[1], ts = supports.shape()[1], c = queries.shape()[2];
  const auto qn = reshape(frame_directions(queries), {nq, 1, tq, c});
  const auto sn = reshape(transpose(frame_directions(supports)), {1, ns, c, ts});
  const auto cost = add_scalar(neg(matmul(qn, sn)), T{1});
  return otam_from_cost(cost, opt);
}

struct DistanceWeights {
  double lambda1 = 1.0;  // prototype-anchor distance
  double lambda2 = 0.5;  // semantic-modulation distance
};

template <class T>
Tensor<T> combined_distance(const Tensor<T>& d_padm, const Tensor<T>& d_spm, const DistanceWeights& w) {
  return add(scale(d_padm, static_cast<T>(w.lambda1)), scale(d_spm, static_cast<T>(w.lambda2)));
}

inline double combined_distance(double d_padm, double d_spm, const DistanceWeights& w) {
  return w.lambda1 * d_padm + w.lambda2 * d_spm;
}

/// softmax(-d) along the last axis.
template <class T>
Tensor<T> class_probabilities(const Tensor<T>& distances) {
  return softmax(neg(distances), -1);
}

inline std::vector<double> class_probabilities(std::span<const double> distances) {
  std::vector<double> p(distances.size());
  if (p.empty()) return p;
  const double lo = *std::min_element(distances.begin(), distances.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(-(distances[i] - lo)));
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace fsar
