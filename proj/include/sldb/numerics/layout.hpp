#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "sldb/numerics/tensor.hpp"

namespace sldb {

/// An index remapping: out[i] = in[src[i]], or zero where src[i] < 0.
///
/// Every spatial regrouping in the encoder (patch partition, patch merge
/// gathers, window partition, cyclic shift, padding) is a GatherIndex, so
/// one backward rule (scatter-add) serves all of them.
struct GatherIndex {
  Shape out_shape;
  std::size_t src_numel = 0;
  std::vector<std::int64_t> src;
};
using GatherPlan = std::shared_ptr<const GatherIndex>;

template <typename T>
Tensor<T> gather(const Tensor<T>& x, const GatherPlan& plan);

/// Plan equivalent to applying `first`, then `second`.
GatherPlan compose(const GatherPlan& first, const GatherPlan& second);

// Plans over channels-last maps [B, H, W, C].
GatherPlan window_partition_plan(std::size_t batch, std::size_t height, std::size_t width,
                                 std::size_t channels, std::size_t window);
GatherPlan window_reverse_plan(std::size_t batch, std::size_t height, std::size_t width,
                               std::size_t channels, std::size_t window);
GatherPlan cyclic_shift_plan(std::size_t batch, std::size_t height, std::size_t width,
                             std::size_t channels, std::ptrdiff_t dy, std::ptrdiff_t dx);
GatherPlan pad_plan(std::size_t batch, std::size_t height, std::size_t width,
                    std::size_t channels, std::size_t padded_height, std::size_t padded_width);
GatherPlan crop_plan(std::size_t batch, std::size_t padded_height, std::size_t padded_width,
                     std::size_t channels, std::size_t height, std::size_t width);

/// [H, W, C] -> [nW, M*M, C] or [B, H, W, C] -> [B*nW, M*M, C]; windows are
/// ordered row-major per image and tokens row-major within a window.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t window);

/// Inverse of window_partition; `shape` is the original map shape.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t window, const Shape& shape);

/// Toroidal roll of the two spatial axes: out[y][x] = in[y - dy][x - dx].
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, std::ptrdiff_t dy, std::ptrdiff_t dx);

}  // namespace sldb
