#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sldb/numerics/layout.hpp"
#include "sldb/numerics/rng.hpp"
#include "sldb/numerics/tensor.hpp"
#include "sldb/swin/config.hpp"

namespace sldb {

/// Additive pre-softmax value standing in for -inf across shifted windows.
inline constexpr double kCrossWindowMask = -100.0;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

template <typename T>
struct LayerNormParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], undefined for bias-free maps
};

/// Multi-head self-attention inside M x M windows with a learned
/// relative-position bias per head.
template <typename T>
struct WindowAttention {
  std::size_t channels = 0;
  std::size_t heads = 0;
  std::size_t window = 0;
  LinearParams<T> qkv;   // [C, 3C], fused query/key/value projection
  LinearParams<T> proj;  // [C, C], output projection
  Tensor<T> bias_table;  // [(2M-1)^2, heads]
};

template <typename T>
struct SwinBlock {
  LayerNormParams<T> norm1;
  WindowAttention<T> attn;
  LayerNormParams<T> norm2;
  LinearParams<T> fc1;
  LinearParams<T> fc2;
  std::size_t shift = 0;
  double drop_path = 0.0;
};

template <typename T>
struct PatchMerging {
  LayerNormParams<T> norm;  // over 4C
  Tensor<T> reduction;      // [4C, 2C], no bias
};

template <typename T>
struct SwinStage {
  StageGeometry geometry{};
  std::vector<SwinBlock<T>> blocks;
  bool has_downsample = false;
  PatchMerging<T> downsample;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> features;             // final map after the closing layer norm [B, h, w, 8C]
  std::vector<Tensor<T>> stages;  // per-stage block outputs before merging
};

/// Training-time switches for a forward pass.
struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // drop-path draws; required when training with drop_path > 0
};

// --- Stand-alone encoder operations -------------------------------------

/// [H, W, 3] or [B, H, W, 3] -> [.., H/4, W/4, 48]; each output vector is the
/// 4x4x3 pixel block flattened row-major over (y, x, channel).
template <typename T>
Tensor<T> patch_partition(const Tensor<T>& image);

/// Position-wise 48 -> C affine map.
template <typename T>
Tensor<T> linear_embed(const Tensor<T>& patches, const Tensor<T>& weight, const Tensor<T>& bias);

/// Gathers the four strided sub-maps of [B, H, W, C] and concatenates them
/// along channels: [B, H/2, W/2, 4C].
template <typename T>
Tensor<T> patch_merge_gather(const Tensor<T>& x);

/// Full merge step: gather, layer-norm over 4C, reduce 4C -> 2C.
template <typename T>
Tensor<T> patch_merge(const Tensor<T>& x, const PatchMerging<T>& merge);

/// Relative-position bias gathered to [heads, M*M, M*M].
template <typename T>
Tensor<T> relative_position_bias(const WindowAttention<T>& attn);

/// Additive mask [nW, N, N] for shifted windows over a padded map: 0 for
/// token pairs that were contiguous before the cyclic shift,
/// kCrossWindowMask for pairs brought together by the wrap-around.
template <typename T>
Tensor<T> shifted_window_mask(std::size_t padded_height, std::size_t padded_width,
                              std::size_t window, std::size_t shift);

/// Attention over windows [Bw, N, C]. `mask`, when defined, is [nW, N, N]
/// and Bw must be a multiple of nW. When `probabilities` is non-null it
/// receives the post-softmax weights [Bw, heads, N, N].
template <typename T>
Tensor<T> window_attention(const Tensor<T>& windows, const WindowAttention<T>& attn,
                           const Tensor<T>& mask, Tensor<T>* probabilities = nullptr);

/// One residual block on a [B, H, W, C] map: attention branch, then MLP
/// branch. Maps not divisible by the window are zero-padded bottom/right
/// before windowing and cropped afterwards.
template <typename T>
Tensor<T> swin_block_forward(const Tensor<T>& x, const SwinBlock<T>& block,
                             const ForwardOptions& options = {});

/// Hierarchical windowed-attention encoder.
template <typename T>
class SwinEncoder {
 public:
  /// Initializes weights from `init` (truncated normal, sigma 0.02; zero
  /// biases; unit layer-norm gains).
  SwinEncoder(const SwinConfig& config, Rng& init);

  const SwinConfig& config() const { return config_; }

  /// Patch partition, linear embedding and the embedding layer norm:
  /// [B, H, W, 3] -> [B, H/4, W/4, C].
  Tensor<T> embed(const Tensor<T>& images) const;
  /// Runs the four stages on embedded tokens.
  EncoderOutput<T> forward_tokens(const Tensor<T>& tokens, const ForwardOptions& options = {}) const;
  EncoderOutput<T> forward(const Tensor<T>& images, const ForwardOptions& options = {}) const;

  ParameterList<T> parameters() const;

  LinearParams<T>& patch_embed() { return patch_embed_; }
  std::vector<SwinStage<T>>& stages() { return stages_; }
  const std::vector<SwinStage<T>>& stages() const { return stages_; }

 private:
  SwinConfig config_;
  LinearParams<T> patch_embed_;
  LayerNormParams<T> embed_norm_;
  std::vector<SwinStage<T>> stages_;
  LayerNormParams<T> norm_;
};

/// Global average pool over tokens followed by a linear classifier.
template <typename T>
struct ClassifierHead {
  LinearParams<T> fc;  // [8C, classes]
};

template <typename T>
Tensor<T> classify(const EncoderOutput<T>& features, const ClassifierHead<T>& head);

// Initialization helpers shared with the objectives built on the encoder.
template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng, double stddev = 0.02);
template <typename T>
LinearParams<T> make_linear(std::size_t in, std::size_t out, bool bias, Rng& rng);
template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t channels);

template <typename T>
std::size_t count_elements(const ParameterList<T>& params);

}  // namespace sldb
