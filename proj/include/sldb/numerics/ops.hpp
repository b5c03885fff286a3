#pragma once

#include <cstddef>
#include <cstdint>

#include "sldb/numerics/tape.hpp"
#include "sldb/numerics/tensor.hpp"

namespace sldb {

inline constexpr double kLayerNormEps = 1e-5;

/// Multiply-accumulates performed by forward matmul/bmm/linear calls on
/// this thread. Backward products are not counted.
std::uint64_t& forward_mac_counter();

/// c (+)= op(a) * op(b) with op(a) m x k and op(b) k x n. `a` is stored m x k
/// (k x m when trans_a) and `b` k x n (n x k when trans_b). Accumulates.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c);

/// [m x k] * [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product over the leading axis of two rank-3 tensors.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

/// Position-wise affine map over the last axis: x[..., in] * w[in, out] + b[out].
/// `b` may be an undefined tensor for a bias-free map.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// a + b where b's extents align with a's trailing extents; each b extent
/// equals the matching a extent or is 1.
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// Mean over one axis; the axis is removed from the result.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Normalizes over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kLayerNormEps);

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Same values under a new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

}  // namespace sldb
