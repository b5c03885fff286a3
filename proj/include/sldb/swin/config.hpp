#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace sldb {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kNumStages = 4;
inline constexpr std::size_t kPatchSize = 4;

/// Window layout a stage actually uses after clamping to its resolution.
struct StageGeometry {
  std::size_t resolution;  // tokens per side
  std::size_t channels;
  std::size_t heads;
  std::size_t window;      // min(M, resolution)
  std::size_t shift;       // 0 when a single window covers the map
  std::size_t padded;      // resolution rounded up to a multiple of window
};

struct SwinConfig {
  std::size_t img_size = 224;
  std::size_t in_channels = 3;
  std::size_t embed_dim = 96;
  std::array<std::size_t, kNumStages> depths{2, 2, 6, 2};
  std::array<std::size_t, kNumStages> heads{3, 6, 12, 24};
  std::size_t window_size = 7;
  double mlp_ratio = 4.0;
  std::optional<std::size_t> shift_size;  // defaults to window_size / 2
  std::size_t num_classes = 10;           // 0 disables the classification head
  double drop_path_rate = 0.0;

  std::size_t shift() const { return shift_size.value_or(window_size / 2); }
  std::size_t stage_channels(std::size_t stage) const { return embed_dim << stage; }
  std::size_t stage_resolution(std::size_t stage) const {
    return img_size / kPatchSize >> stage;
  }
  std::size_t final_channels() const { return stage_channels(kNumStages - 1); }
  std::size_t mlp_hidden(std::size_t channels) const {
    return static_cast<std::size_t>(static_cast<double>(channels) * mlp_ratio);
  }
  StageGeometry stage_geometry(std::size_t stage) const;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// The lightweight fine-tuning encoder (stage-3 depth 6, heads 3/6/12/24).
  static SwinConfig sl_ddbd();
  /// The unmodified baseline (stage-3 depth 18, heads 4/8/16/32).
  static SwinConfig baseline();
  /// Desk-scale model used by tests and demos.
  static SwinConfig tiny();
};

}  // namespace sldb
