#include "sldb/numerics/layout.hpp"

#include "sldb/numerics/tape.hpp"

namespace sldb {

template <typename T>
Tensor<T> gather(const Tensor<T>& x, const GatherPlan& plan) {
  if (x.numel() != plan->src_numel) {
    throw DimensionError("gather: plan expects " + std::to_string(plan->src_numel) +
                         " elements, got " + shape_str(x.shape()));
  }
  Tensor<T> out(plan->out_shape);
  const auto& src = plan->src;
  const T* in = x.ptr();
  T* y = out.ptr();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] >= 0) y[i] = in[src[i]];
  }
  if (autograd::needs_grad(x)) {
    auto xn = x.node(), on = out.node();
    autograd::record(out, [xn, on, plan] {
      if (on->grad.empty()) return;
      auto& gx = autograd::grad_buffer(*xn);
      const auto& s = plan->src;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] >= 0) gx[static_cast<std::size_t>(s[i])] += on->grad[i];
      }
    });
  }
  return out;
}

GatherPlan compose(const GatherPlan& first, const GatherPlan& second) {
  if (shape_numel(first->out_shape) != second->src_numel) {
    throw DimensionError("compose: plans do not chain");
  }
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = second->out_shape;
  plan->src_numel = first->src_numel;
  plan->src.resize(second->src.size());
  for (std::size_t i = 0; i < second->src.size(); ++i) {
    const auto mid = second->src[i];
    plan->src[i] = mid < 0 ? -1 : first->src[static_cast<std::size_t>(mid)];
  }
  return plan;
}

namespace {

void require_divisible(std::size_t height, std::size_t width, std::size_t window) {
  if (window == 0 || height % window != 0 || width % window != 0) {
    throw DimensionError("window partition: " + std::to_string(height) + "x" +
                         std::to_string(width) + " map is not divisible by window " +
                         std::to_string(window));
  }
}

std::size_t wrap(std::ptrdiff_t v, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

}  // namespace

GatherPlan window_partition_plan(std::size_t batch, std::size_t height, std::size_t width,
                                 std::size_t channels, std::size_t window) {
  require_divisible(height, width, window);
  const std::size_t wy = height / window, wx = width / window;
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {batch * wy * wx, window * window, channels};
  plan->src_numel = batch * height * width * channels;
  plan->src.resize(plan->src_numel);
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t py = 0; py < wy; ++py)
      for (std::size_t px = 0; px < wx; ++px)
        for (std::size_t iy = 0; iy < window; ++iy)
          for (std::size_t ix = 0; ix < window; ++ix) {
            const std::size_t y = py * window + iy, x = px * window + ix;
            const std::size_t base = ((b * height + y) * width + x) * channels;
            for (std::size_t c = 0; c < channels; ++c) {
              plan->src[o++] = static_cast<std::int64_t>(base + c);
            }
          }
  return plan;
}

GatherPlan window_reverse_plan(std::size_t batch, std::size_t height, std::size_t width,
                               std::size_t channels, std::size_t window) {
  auto forward = window_partition_plan(batch, height, width, channels, window);
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {batch, height, width, channels};
  plan->src_numel = forward->src.size();
  plan->src.resize(forward->src.size());
  for (std::size_t i = 0; i < forward->src.size(); ++i) {
    plan->src[static_cast<std::size_t>(forward->src[i])] = static_cast<std::int64_t>(i);
  }
  return plan;
}

GatherPlan cyclic_shift_plan(std::size_t batch, std::size_t height, std::size_t width,
                             std::size_t channels, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {batch, height, width, channels};
  plan->src_numel = batch * height * width * channels;
  plan->src.resize(plan->src_numel);
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t sy = wrap(static_cast<std::ptrdiff_t>(y) - dy, height);
        const std::size_t sx = wrap(static_cast<std::ptrdiff_t>(x) - dx, width);
        const std::size_t base = ((b * height + sy) * width + sx) * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          plan->src[o++] = static_cast<std::int64_t>(base + c);
        }
      }
  return plan;
}

GatherPlan pad_plan(std::size_t batch, std::size_t height, std::size_t width,
                    std::size_t channels, std::size_t padded_height, std::size_t padded_width) {
  if (padded_height < height || padded_width < width) {
    throw DimensionError("pad: target extents smaller than the input");
  }
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {batch, padded_height, padded_width, channels};
  plan->src_numel = batch * height * width * channels;
  plan->src.assign(batch * padded_height * padded_width * channels, -1);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t c = 0; c < channels; ++c) {
          plan->src[((b * padded_height + y) * padded_width + x) * channels + c] =
              static_cast<std::int64_t>(((b * height + y) * width + x) * channels + c);
        }
  return plan;
}

GatherPlan crop_plan(std::size_t batch, std::size_t padded_height, std::size_t padded_width,
                     std::size_t channels, std::size_t height, std::size_t width) {
  if (padded_height < height || padded_width < width) {
    throw DimensionError("crop: target extents larger than the input");
  }
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {batch, height, width, channels};
  plan->src_numel = batch * padded_height * padded_width * channels;
  plan->src.resize(batch * height * width * channels);
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t c = 0; c < channels; ++c) {
          plan->src[o++] =
              static_cast<std::int64_t>(((b * padded_height + y) * padded_width + x) * channels + c);
        }
  return plan;
}

namespace {

struct MapDims {
  std::size_t batch, height, width, channels;
  bool batched;
};

MapDims map_dims(const Shape& shape, const char* op) {
  if (shape.size() == 3) return {1, shape[0], shape[1], shape[2], false};
  if (shape.size() == 4) return {shape[0], shape[1], shape[2], shape[3], true};
  throw DimensionError(std::string(op) + ": expected [H,W,C] or [B,H,W,C], got " +
                       shape_str(shape));
}

}  // namespace

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t window) {
  const auto d = map_dims(x.shape(), "window_partition");
  return gather(x, window_partition_plan(d.batch, d.height, d.width, d.channels, window));
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t window, const Shape& shape) {
  const auto d = map_dims(shape, "window_reverse");
  auto plan = window_reverse_plan(d.batch, d.height, d.width, d.channels, window);
  if (!d.batched) {
    auto flat = std::make_shared<GatherIndex>(*plan);
    flat->out_shape = shape;
    plan = flat;
  }
  return gather(windows, plan);
}

template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  const auto d = map_dims(x.shape(), "cyclic_shift");
  auto plan = cyclic_shift_plan(d.batch, d.height, d.width, d.channels, dy, dx);
  if (!d.batched) {
    auto flat = std::make_shared<GatherIndex>(*plan);
    flat->out_shape = x.shape();
    plan = flat;
  }
  return gather(x, plan);
}

template Tensor<float> gather(const Tensor<float>&, const GatherPlan&);
template Tensor<double> gather(const Tensor<double>&, const GatherPlan&);
template Tensor<float> window_partition(const Tensor<float>&, std::size_t);
template Tensor<double> window_partition(const Tensor<double>&, std::size_t);
template Tensor<float> window_reverse(const Tensor<float>&, std::size_t, const Shape&);
template Tensor<double> window_reverse(const Tensor<double>&, std::size_t, const Shape&);
template Tensor<float> cyclic_shift(const Tensor<float>&, std::ptrdiff_t, std::ptrdiff_t);
template Tensor<double> cyclic_shift(const Tensor<double>&, std::ptrdiff_t, std::ptrdiff_t);

}  // namespace sldb
