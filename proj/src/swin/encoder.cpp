#include "sldb/swin/encoder.hpp"

#include <cmath>

#include "sldb/numerics/ops.hpp"

namespace sldb {

namespace {

struct MapShape {
  std::size_t batch, height, width, channels;
  bool batched;
};

MapShape map_shape(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw DimensionError(std::string(op) + ": expected [H,W,C] or [B,H,W,C], got " + shape_str(s));
}

Shape with_batch(const MapShape& m, std::size_t h, std::size_t w, std::size_t c) {
  return m.batched ? Shape{m.batch, h, w, c} : Shape{h, w, c};
}

// Tokens of the fused [.., 3C] projection for one of q/k/v, split per head:
// [Bw, N, 3C] -> [Bw * heads, N, d].
GatherPlan head_split_plan(std::size_t bw, std::size_t n, std::size_t c, std::size_t heads,
                           std::size_t part) {
  const std::size_t d = c / heads;
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {bw * heads, n, d};
  plan->src_numel = bw * n * 3 * c;
  plan->src.resize(bw * n * c);
  std::size_t o = 0;
  for (std::size_t b = 0; b < bw; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < d; ++j) {
          plan->src[o++] = static_cast<std::int64_t>((b * n + t) * 3 * c + part * c + h * d + j);
        }
  return plan;
}

// [Bw * heads, N, d] -> [Bw, N, C] (head-major channel concatenation).
GatherPlan head_merge_plan(std::size_t bw, std::size_t n, std::size_t c, std::size_t heads) {
  const std::size_t d = c / heads;
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {bw, n, c};
  plan->src_numel = bw * n * c;
  plan->src.resize(bw * n * c);
  std::size_t o = 0;
  for (std::size_t b = 0; b < bw; ++b)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < d; ++j) {
          plan->src[o++] = static_cast<std::int64_t>(((b * heads + h) * n + t) * d + j);
        }
  return plan;
}

GatherPlan relative_index_plan(std::size_t window, std::size_t heads) {
  const std::size_t n = window * window, side = 2 * window - 1;
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {heads, n, n};
  plan->src_numel = side * side * heads;
  plan->src.resize(heads * n * n);
  std::size_t o = 0;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t dy = i / window + window - 1 - j / window;
        const std::size_t dx = i % window + window - 1 - j % window;
        plan->src[o++] = static_cast<std::int64_t>((dy * side + dx) * heads + h);
      }
  return plan;
}

template <typename T>
Tensor<T> drop_path(const Tensor<T>& branch, double rate, const ForwardOptions& options) {
  if (!options.training || rate <= 0.0) return branch;
  if (options.rng == nullptr) throw std::invalid_argument("drop_path: training needs an rng");
  const std::size_t batch = branch.dim(0), per = branch.numel() / batch;
  const double keep = 1.0 - rate;
  Tensor<T> scale_map(branch.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const T v = options.rng->bernoulli(keep) ? static_cast<T>(1.0 / keep) : T(0);
    std::fill_n(scale_map.ptr() + b * per, per, v);
  }
  return mul(branch, scale_map);
}

}  // namespace

template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.0, stddev));
  return t.set_requires_grad(true);
}

template <typename T>
LinearParams<T> make_linear(std::size_t in, std::size_t out, bool bias, Rng& rng) {
  LinearParams<T> p;
  p.weight = trunc_normal<T>({in, out}, rng);
  if (bias) p.bias = Tensor<T>(Shape{out}).set_requires_grad(true);
  return p;
}

template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t channels) {
  return {Tensor<T>(Shape{channels}, T(1)).set_requires_grad(true),
          Tensor<T>(Shape{channels}).set_requires_grad(true)};
}

template <typename T>
Tensor<T> patch_partition(const Tensor<T>& image) {
  const auto m = map_shape(image.shape(), "patch_partition");
  if (m.height % kPatchSize || m.width % kPatchSize) {
    throw DimensionError("patch_partition: " + shape_str(image.shape()) +
                         " is not divisible into 4x4 patches");
  }
  const std::size_t ph = m.height / kPatchSize, pw = m.width / kPatchSize;
  const std::size_t depth = kPatchSize * kPatchSize * m.channels;
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = with_batch(m, ph, pw, depth);
  plan->src_numel = image.numel();
  plan->src.resize(image.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < m.batch; ++b)
    for (std::size_t py = 0; py < ph; ++py)
      for (std::size_t px = 0; px < pw; ++px)
        for (std::size_t iy = 0; iy < kPatchSize; ++iy)
          for (std::size_t ix = 0; ix < kPatchSize; ++ix)
            for (std::size_t c = 0; c < m.channels; ++c) {
              const std::size_t y = py * kPatchSize + iy, x = px * kPatchSize + ix;
              plan->src[o++] =
                  static_cast<std::int64_t>(((b * m.height + y) * m.width + x) * m.channels + c);
            }
  return gather(image, plan);
}

template <typename T>
Tensor<T> linear_embed(const Tensor<T>& patches, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || weight.dim(0) != kPatchSize * kPatchSize * 3) {
    throw DimensionError("linear_embed: weight must be [48, C], got " + shape_str(weight.shape()));
  }
  return linear(patches, weight, bias);
}

template <typename T>
Tensor<T> patch_merge_gather(const Tensor<T>& x) {
  const auto m = map_shape(x.shape(), "patch_merge");
  if (m.height % 2 || m.width % 2) {
    throw DimensionError("patch_merge: odd extents in " + shape_str(x.shape()));
  }
  const std::size_t h2 = m.height / 2, w2 = m.width / 2, c = m.channels;
  // Sub-map order (0,0), (1,0), (0,1), (1,1) as (row offset, column offset).
  constexpr std::size_t dy[4] = {0, 1, 0, 1};
  constexpr std::size_t dx[4] = {0, 0, 1, 1};
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = with_batch(m, h2, w2, 4 * c);
  plan->src_numel = x.numel();
  plan->src.resize(x.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < m.batch; ++b)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j)
        for (std::size_t q = 0; q < 4; ++q)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t y = 2 * i + dy[q], xx = 2 * j + dx[q];
            plan->src[o++] =
                static_cast<std::int64_t>(((b * m.height + y) * m.width + xx) * c + ch);
          }
  return gather(x, plan);
}

template <typename T>
Tensor<T> patch_merge(const Tensor<T>& x, const PatchMerging<T>& merge) {
  auto merged = patch_merge_gather(x);
  if (merge.reduction.dim(0) != merged.shape().back()) {
    throw DimensionError("patch_merge: reduction " + shape_str(merge.reduction.shape()) +
                         " does not match " + shape_str(merged.shape()));
  }
  return linear(layer_norm(merged, merge.norm.weight, merge.norm.bias), merge.reduction,
                Tensor<T>());
}

template <typename T>
Tensor<T> relative_position_bias(const WindowAttention<T>& attn) {
  return gather(attn.bias_table, relative_index_plan(attn.window, attn.heads));
}

template <typename T>
Tensor<T> shifted_window_mask(std::size_t padded_height, std::size_t padded_width,
                              std::size_t window, std::size_t shift) {
  // Label the nine regions the roll creates, then compare labels per window.
  std::vector<int> region(padded_height * padded_width, 0);
  auto band = [&](std::size_t v, std::size_t extent) {
    if (v < extent - window) return 0;
    if (v < extent - shift) return 1;
    return 2;
  };
  for (std::size_t y = 0; y < padded_height; ++y)
    for (std::size_t x = 0; x < padded_width; ++x) {
      region[y * padded_width + x] = band(y, padded_height) * 3 + band(x, padded_width);
    }
  const std::size_t wy = padded_height / window, wx = padded_width / window;
  const std::size_t n = window * window;
  Tensor<T> mask(Shape{wy * wx, n, n});
  for (std::size_t py = 0; py < wy; ++py)
    for (std::size_t px = 0; px < wx; ++px) {
      T* m = mask.ptr() + (py * wx + px) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const int ri =
            region[(py * window + i / window) * padded_width + px * window + i % window];
        for (std::size_t j = 0; j < n; ++j) {
          const int rj =
              region[(py * window + j / window) * padded_width + px * window + j % window];
          m[i * n + j] = ri == rj ? T(0) : static_cast<T>(kCrossWindowMask);
        }
      }
    }
  return mask;
}

template <typename T>
Tensor<T> window_attention(const Tensor<T>& windows, const WindowAttention<T>& attn,
                           const Tensor<T>& mask, Tensor<T>* probabilities) {
  if (windows.rank() != 3 || windows.dim(2) != attn.channels ||
      windows.dim(1) != attn.window * attn.window) {
    throw DimensionError("window_attention: windows " + shape_str(windows.shape()) +
                         " do not match a " + std::to_string(attn.window) + "x" +
                         std::to_string(attn.window) + " window of " +
                         std::to_string(attn.channels) + " channels");
  }
  const std::size_t bw = windows.dim(0), n = windows.dim(1), c = attn.channels;
  const std::size_t heads = attn.heads, d = c / heads;

  auto qkv = linear(windows, attn.qkv.weight, attn.qkv.bias);
  auto q = scale(gather(qkv, head_split_plan(bw, n, c, heads, 0)),
                 static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  auto k = gather(qkv, head_split_plan(bw, n, c, heads, 1));
  auto v = gather(qkv, head_split_plan(bw, n, c, heads, 2));

  auto scores = bmm(q, k, false, true);  // [Bw*h, N, N]
  const auto bias = relative_position_bias(attn);
  if (mask.defined()) {
    const std::size_t nw = mask.dim(0);
    if (bw % nw != 0) {
      throw DimensionError("window_attention: " + std::to_string(bw) +
                           " windows are not a multiple of the mask's " + std::to_string(nw));
    }
    auto s5 = reshape(scores, {bw / nw, nw, heads, n, n});
    s5 = add_broadcast(s5, bias);
    s5 = add_broadcast(s5, reshape(mask, {nw, 1, n, n}));
    scores = reshape(s5, {bw * heads, n, n});
  } else {
    scores = reshape(add_broadcast(reshape(scores, {bw, heads, n, n}), bias), {bw * heads, n, n});
  }
  auto probs = softmax(scores, 2);
  if (probabilities) *probabilities = reshape(probs.detach(), {bw, heads, n, n});
  auto mixed = gather(bmm(probs, v), head_merge_plan(bw, n, c, heads));
  return linear(mixed, attn.proj.weight, attn.proj.bias);
}

template <typename T>
Tensor<T> swin_block_forward(const Tensor<T>& x, const SwinBlock<T>& block,
                             const ForwardOptions& options) {
  if (x.rank() != 4) throw DimensionError("swin block: expected [B,H,W,C], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), height = x.dim(1), width = x.dim(2), c = x.dim(3);
  const std::size_t window = block.attn.window, shift = block.shift;
  const std::size_t hp = (height + window - 1) / window * window;
  const std::size_t wp = (width + window - 1) / window * window;
  const auto s = static_cast<std::ptrdiff_t>(shift);

  GatherPlan into = window_partition_plan(batch, hp, wp, c, window);
  GatherPlan back = window_reverse_plan(batch, hp, wp, c, window);
  if (shift) {
    into = compose(cyclic_shift_plan(batch, hp, wp, c, -s, -s), into);
    back = compose(back, cyclic_shift_plan(batch, hp, wp, c, s, s));
  }
  if (hp != height || wp != width) {
    into = compose(pad_plan(batch, height, width, c, hp, wp), into);
    back = compose(back, crop_plan(batch, hp, wp, c, height, width));
  }
  Tensor<T> mask;
  if (shift) mask = shifted_window_mask<T>(hp, wp, window, shift);

  auto normed = layer_norm(x, block.norm1.weight, block.norm1.bias);
  auto attended = gather(window_attention(gather(normed, into), block.attn, mask), back);
  auto mid = add(x, drop_path(attended, block.drop_path, options));

  auto hidden = gelu(linear(layer_norm(mid, block.norm2.weight, block.norm2.bias),
                            block.fc1.weight, block.fc1.bias));
  auto mlp = linear(hidden, block.fc2.weight, block.fc2.bias);
  return add(mid, drop_path(mlp, block.drop_path, options));
}

template <typename T>
SwinEncoder<T>::SwinEncoder(const SwinConfig& config, Rng& init) : config_(config) {
  config_.validate();
  const std::size_t c = config_.embed_dim;
  patch_embed_ = make_linear<T>(kPatchSize * kPatchSize * config_.in_channels, c, true, init);
  embed_norm_ = make_layer_norm<T>(c);

  std::size_t total_blocks = 0;
  for (auto d : config_.depths) total_blocks += d;
  std::size_t block_index = 0;

  for (std::size_t s = 0; s < kNumStages; ++s) {
    SwinStage<T> stage;
    stage.geometry = config_.stage_geometry(s);
    const auto& g = stage.geometry;
    const std::size_t dim = g.channels, hidden = config_.mlp_hidden(dim);
    const std::size_t side = 2 * g.window - 1;
    for (std::size_t b = 0; b < config_.depths[s]; ++b) {
      SwinBlock<T> block;
      block.norm1 = make_layer_norm<T>(dim);
      block.attn.channels = dim;
      block.attn.heads = g.heads;
      block.attn.window = g.window;
      block.attn.qkv = make_linear<T>(dim, 3 * dim, true, init);
      block.attn.proj = make_linear<T>(dim, dim, true, init);
      block.attn.bias_table = trunc_normal<T>({side * side, g.heads}, init);
      block.norm2 = make_layer_norm<T>(dim);
      block.fc1 = make_linear<T>(dim, hidden, true, init);
      block.fc2 = make_linear<T>(hidden, dim, true, init);
      block.shift = b % 2 == 1 ? g.shift : 0;
      block.drop_path = total_blocks > 1 ? config_.drop_path_rate * static_cast<double>(block_index) /
                                               static_cast<double>(total_blocks - 1)
                                         : 0.0;
      ++block_index;
      stage.blocks.push_back(std::move(block));
    }
    if (s + 1 < kNumStages) {
      stage.has_downsample = true;
      stage.downsample.norm = make_layer_norm<T>(4 * dim);
      stage.downsample.reduction = trunc_normal<T>({4 * dim, 2 * dim}, init);
    }
    stages_.push_back(std::move(stage));
  }
  norm_ = make_layer_norm<T>(config_.final_channels());
}

template <typename T>
Tensor<T> SwinEncoder<T>::embed(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.img_size ||
      images.dim(2) != config_.img_size || images.dim(3) != config_.in_channels) {
    throw DimensionError("encoder: expected [B," + std::to_string(config_.img_size) + "," +
                         std::to_string(config_.img_size) + ",3] images, got " +
                         shape_str(images.shape()));
  }
  auto tokens = linear_embed(patch_partition(images), patch_embed_.weight, patch_embed_.bias);
  return layer_norm(tokens, embed_norm_.weight, embed_norm_.bias);
}

template <typename T>
EncoderOutput<T> SwinEncoder<T>::forward_tokens(const Tensor<T>& tokens,
                                                const ForwardOptions& options) const {
  EncoderOutput<T> out;
  Tensor<T> x = tokens;
  for (const auto& stage : stages_) {
    for (const auto& block : stage.blocks) x = swin_block_forward(x, block, options);
    out.stages.push_back(x);
    if (stage.has_downsample) x = patch_merge(x, stage.downsample);
  }
  out.features = layer_norm(x, norm_.weight, norm_.bias);
  return out;
}

template <typename T>
EncoderOutput<T> SwinEncoder<T>::forward(const Tensor<T>& images,
                                         const ForwardOptions& options) const {
  return forward_tokens(embed(images), options);
}

template <typename T>
ParameterList<T> SwinEncoder<T>::parameters() const {
  ParameterList<T> p;
  auto add_linear = [&](const std::string& prefix, const LinearParams<T>& l) {
    p.push_back({prefix + ".weight", l.weight});
    if (l.bias.defined()) p.push_back({prefix + ".bias", l.bias});
  };
  auto add_norm = [&](const std::string& prefix, const LayerNormParams<T>& n) {
    p.push_back({prefix + ".weight", n.weight});
    p.push_back({prefix + ".bias", n.bias});
  };
  add_linear("patch_embed.proj", patch_embed_);
  add_norm("patch_embed.norm", embed_norm_);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string layer = "layers." + std::to_string(s);
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      const auto& blk = stages_[s].blocks[b];
      const std::string pre = layer + ".blocks." + std::to_string(b);
      add_norm(pre + ".norm1", blk.norm1);
      add_linear(pre + ".attn.qkv", blk.attn.qkv);
      add_linear(pre + ".attn.proj", blk.attn.proj);
      p.push_back({pre + ".attn.relative_position_bias_table", blk.attn.bias_table});
      add_norm(pre + ".norm2", blk.norm2);
      add_linear(pre + ".mlp.fc1", blk.fc1);
      add_linear(pre + ".mlp.fc2", blk.fc2);
    }
    if (stages_[s].has_downsample) {
      add_norm(layer + ".downsample.norm", stages_[s].downsample.norm);
      p.push_back({layer + ".downsample.reduction.weight", stages_[s].downsample.reduction});
    }
  }
  add_norm("norm", norm_);
  return p;
}

template <typename T>
Tensor<T> classify(const EncoderOutput<T>& features, const ClassifierHead<T>& head) {
  const auto& f = features.features;
  auto pooled = mean_axis(reshape(f, {f.dim(0), f.dim(1) * f.dim(2), f.dim(3)}), 1);
  return linear(pooled, head.fc.weight, head.fc.bias);
}

template <typename T>
std::size_t count_elements(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

#define SLDB_INSTANTIATE_ENCODER(T)                                                           \
  template Tensor<T> trunc_normal(Shape, Rng&, double);                                       \
  template LinearParams<T> make_linear(std::size_t, std::size_t, bool, Rng&);                 \
  template LayerNormParams<T> make_layer_norm(std::size_t);                                   \
  template Tensor<T> patch_partition(const Tensor<T>&);                                       \
  template Tensor<T> linear_embed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> patch_merge_gather(const Tensor<T>&);                                    \
  template Tensor<T> patch_merge(const Tensor<T>&, const PatchMerging<T>&);                   \
  template Tensor<T> relative_position_bias(const WindowAttention<T>&);                       \
  template Tensor<T> shifted_window_mask(std::size_t, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> window_attention(const Tensor<T>&, const WindowAttention<T>&,            \
                                      const Tensor<T>&, Tensor<T>*);                          \
  template Tensor<T> swin_block_forward(const Tensor<T>&, const SwinBlock<T>&,                \
                                        const ForwardOptions&);                               \
  template class SwinEncoder<T>;                                                              \
  template Tensor<T> classify(const EncoderOutput<T>&, const ClassifierHead<T>&);             \
  template std::size_t count_elements(const ParameterList<T>&);

SLDB_INSTANTIATE_ENCODER(float)
SLDB_INSTANTIATE_ENCODER(double)

}  // namespace sldb
