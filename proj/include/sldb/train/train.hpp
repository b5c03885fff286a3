#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sldb/data/data.hpp"
#include "sldb/mim/mim.hpp"
#include "sldb/swin/encoder.hpp"
#include "sldb/train/checkpoint.hpp"
#include "sldb/train/config.hpp"
#include "sldb/train/metrics.hpp"

namespace sldb {

/// Encoder plus pooled linear head. The mask token is only used when
/// fine-tuning with input masking.
template <typename T>
class Classifier {
 public:
  Classifier(const SwinConfig& config, Rng& init);

  SwinEncoder<T>& encoder() { return encoder_; }
  const SwinEncoder<T>& encoder() const { return encoder_; }
  const ClassifierHead<T>& head() const { return head_; }
  const Tensor<T>& mask_token() const { return mask_token_; }

  /// [B, H, W, 3] -> [B, classes]. `masks` may be empty (no masking).
  Tensor<T> logits(const Tensor<T>& images, const std::vector<MaskMap>& masks = {},
                   const ForwardOptions& options = {}) const;

  /// Encoder parameters, then head.weight, head.bias and mask_token.
  ParameterList<T> parameters() const;

 private:
  SwinEncoder<T> encoder_;
  ClassifierHead<T> head_;
  Tensor<T> mask_token_;
};

/// Bicubic resampling (a = -0.75, half-pixel centres, clamped taps) of a
/// relative-position table [(2a-1)^2, heads] to [(2b-1)^2, heads].
template <typename T>
Tensor<T> interpolate_bias_table(const Tensor<T>& table, std::size_t to_side);

/// Loads encoder weights (and the mask token when present) from a pretraining
/// or fine-tuning checkpoint. Bias tables of another window size are
/// interpolated when `interpolate` is set; any other mismatch raises
/// CompatibilityError naming every offending tensor. Returns the names of
/// interpolated tables.
template <typename T>
std::vector<std::string> load_pretrained_encoder(const Checkpoint& checkpoint, Classifier<T>& model,
                                                 bool interpolate);

/// Deterministic pass over `members` of the loader (all when empty): no
/// augmentation, no masking, argmax predictions.
Metrics evaluate(const Classifier<float>& model, BatchLoader& loader, std::size_t batch_size,
                 const std::vector<std::size_t>& members = {});

struct RunOptions {
  std::filesystem::path out_dir;
  std::filesystem::path resume;       // checkpoint to continue from
  std::filesystem::path pretrained;   // fine-tuning only: encoder initialization
  std::size_t stop_after_step = 0;    // stop once this many global steps are done (0: run to the end)
  const DatasetIndex* test = nullptr; // fine-tuning only: held-out set evaluated each epoch
  bool quiet = true;
};

struct PretrainResult {
  std::vector<double> losses;  // one per executed step
  std::size_t steps_done = 0;  // global step count at exit
  std::filesystem::path checkpoint;
};

struct FinetuneResult {
  std::vector<double> losses;
  std::size_t steps_done = 0;
  std::size_t epochs_done = 0;
  std::vector<double> train_accuracy;  // per finished epoch
  std::size_t first_full_accuracy_epoch = 0;  // 1-based; 0 if never reached
  Metrics train_metrics;
  Metrics test_metrics;  // meaningful only with a test index
  std::filesystem::path checkpoint;
};

/// Masked-image-modeling pretraining. Writes pretrain_log.tsv
/// (step, epoch, lr, loss) and pretrain.ckpt under out_dir.
PretrainResult run_pretrain(const RunConfig& config, const DatasetIndex& data, const RunOptions& options);

/// Classification fine-tuning. Writes finetune_steps.tsv (step, epoch, lr,
/// loss, mix), finetune_log.tsv (one row per epoch) and finetune.ckpt.
FinetuneResult run_finetune(const RunConfig& config, const DatasetIndex& train, const RunOptions& options);

/// Reads the config stored in a checkpoint's metadata.
RunConfig checkpoint_config(const Checkpoint& checkpoint);
/// "pretrain" or "finetune".
std::string checkpoint_kind(const Checkpoint& checkpoint);
/// Rebuilds a classifier from a fine-tuning checkpoint.
Classifier<float> load_classifier(const Checkpoint& checkpoint);

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;
};
std::vector<LossRecord> read_loss_log(const std::filesystem::path& path);

}  // namespace sldb
