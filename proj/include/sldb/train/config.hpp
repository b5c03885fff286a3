#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sldb/augment/augment.hpp"
#include "sldb/mim/mim.hpp"
#include "sldb/swin/config.hpp"
#include "sldb/train/optimizer.hpp"

namespace sldb {

/// Everything a pretraining or fine-tuning run needs. Serialized as one flat
/// JSON object; see to_json for the key names.
struct RunConfig {
  SwinConfig model = SwinConfig::sl_ddbd();
  MaskSpec mask;               // pretraining mask
  std::size_t target_factor = 32;
  AugmentConfig augment;
  AdamWHyper optim;

  double base_lr = 5e-3;
  double min_lr = -1;          // negative: base_lr / 100
  std::size_t warmup_steps = 0;
  std::size_t epochs = 110;
  std::size_t batch_size = 32;
  std::uint64_t seed = kDefaultSeed;
  double train_fraction = 0.8;

  // Fine-tuning only.
  bool mask_in_finetune = true;
  std::size_t finetune_mask_patch_size = 64;
  double finetune_mask_ratio = 0.5;
  bool interpolate_bias = false;  // remap relative-position tables across window sizes
  bool stop_at_full_train_accuracy = false;

  std::size_t checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint

  double resolved_min_lr() const { return min_lr < 0 ? base_lr / 100.0 : min_lr; }
  MaskSpec finetune_mask() const { return {finetune_mask_patch_size, finetune_mask_ratio, mask.seed}; }

  /// Throws ConfigError on the first invalid field.
  void validate() const;

  std::string to_json() const;
  /// Unknown keys and mistyped values raise ConfigError.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Applies "key=value" overrides; values are parsed as JSON, falling back to
/// a plain string.
RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace sldb
