#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sldb/numerics/rng.hpp"
#include "sldb/numerics/tensor.hpp"
#include "sldb/swin/encoder.hpp"
#include "sldb/train/optimizer.hpp"

namespace sldb {

/// Raised when a loss has nothing to average over.
class EmptyMaskError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct MaskSpec {
  std::size_t mask_patch_size = 32;  // pixels
  double ratio = 0.5;
  std::uint64_t seed = kDefaultSeed;

  void validate() const;
};

/// Random block mask over a square image. Units are mask_patch_size pixels
/// on a side; the last row/column of units is clipped when the image is not
/// a whole number of units.
class MaskMap {
 public:
  MaskMap() = default;
  MaskMap(std::size_t img_size, std::size_t unit_size, std::vector<std::uint8_t> units);

  std::size_t img_size() const { return img_size_; }
  std::size_t unit_size() const { return unit_size_; }
  std::size_t units_per_side() const { return per_side_; }
  std::size_t unit_count() const { return units_.size(); }
  std::size_t masked_units() const;
  bool unit(std::size_t row, std::size_t col) const { return units_[row * per_side_ + col] != 0; }
  const std::vector<std::uint8_t>& units() const { return units_; }

  /// Per-token flags at stride `stride` pixels (4 for the embedded tokens),
  /// row-major over (img/stride)^2.
  std::vector<std::uint8_t> token_mask(std::size_t stride = kPatchSize) const;
  /// Per-pixel flags, row-major over img^2.
  std::vector<std::uint8_t> pixel_mask() const;
  std::size_t masked_pixels() const;

 private:
  std::size_t img_size_ = 0, unit_size_ = 0, per_side_ = 0;
  std::vector<std::uint8_t> units_;
};

/// Exactly round(ratio * units) units chosen uniformly without replacement.
MaskMap generate_mask(const MaskSpec& spec, std::size_t img_size, Rng& rng);
/// Same, drawing from a generator seeded with spec.seed.
MaskMap generate_mask(const MaskSpec& spec, std::size_t img_size);

/// Replaces masked positions of tokens [B, h, w, C] by `mask_token` [C].
/// `masks` holds one map per sample, or a single map shared by the batch.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const std::vector<MaskMap>& masks,
                     const Tensor<T>& mask_token);

/// Linear map from a feature map at stride r to r x r x 3 pixel blocks.
template <typename T>
struct PredictionHead {
  std::size_t factor = 32;
  LinearParams<T> fc;  // [channels at that stride, r*r*3]
};

/// Stage index whose output sits at stride `factor` (4 -> 0 ... 32 -> 3).
std::size_t stage_for_factor(std::size_t factor);

template <typename T>
PredictionHead<T> make_prediction_head(const SwinConfig& config, std::size_t factor, Rng& rng);

/// Features at the head's stride mapped to pixels: [B, h, w, r*r*3] ->
/// [B, h*r, w*r, 3], each block laid out row-major over (y, x, channel).
template <typename T>
Tensor<T> predict_pixels(const EncoderOutput<T>& features, const PredictionHead<T>& head);

/// Mean absolute error over masked pixel elements of [B, H, W, 3] images.
/// Throws EmptyMaskError when no pixel is masked.
template <typename T>
Tensor<T> masked_l1_loss(const Tensor<T>& pred, const Tensor<T>& target,
                         const std::vector<MaskMap>& masks);

/// Encoder, mask token and prediction head trained together.
template <typename T>
class MimModel {
 public:
  MimModel(const SwinConfig& config, std::size_t target_factor, Rng& init);

  SwinEncoder<T>& encoder() { return encoder_; }
  const SwinEncoder<T>& encoder() const { return encoder_; }
  const Tensor<T>& mask_token() const { return mask_token_; }
  const PredictionHead<T>& head() const { return head_; }

  /// Masked reconstruction of `images` [B, H, W, 3] under per-sample masks.
  Tensor<T> reconstruct(const Tensor<T>& images, const std::vector<MaskMap>& masks,
                        const ForwardOptions& options = {}) const;
  Tensor<T> loss(const Tensor<T>& images, const std::vector<MaskMap>& masks,
                 const ForwardOptions& options = {}) const;

  /// Encoder parameters followed by mask_token and decoder.weight/bias.
  ParameterList<T> parameters() const;

 private:
  SwinEncoder<T> encoder_;
  Tensor<T> mask_token_;
  PredictionHead<T> head_;
};

/// Draws one mask per sample, runs forward and backward, applies one AdamW
/// update and returns the loss measured before the update.
template <typename T>
double pretrain_step(MimModel<T>& model, const Tensor<T>& images, const MaskSpec& spec, Rng& rng,
                     AdamW<T>& optimizer, double lr);
/// Same step with caller-supplied masks; `rng` feeds drop-path only.
template <typename T>
double pretrain_step(MimModel<T>& model, const Tensor<T>& images,
                     const std::vector<MaskMap>& masks, Rng& rng, AdamW<T>& optimizer, double lr);

}  // namespace sldb
