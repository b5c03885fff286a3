#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sldb/swin/config.hpp"

namespace sldb {

enum class AttentionKind { kGlobal, kWindowed };

/// Multiply-accumulate cost of one attention layer on an h x w map with C
/// channels: 4hwC^2 + 2(hw)^2 C globally, 4hwC^2 + 2M^2 hwC within windows.
std::uint64_t count_attention_flops(AttentionKind kind, std::size_t h, std::size_t w,
                                    std::size_t channels, std::size_t window);

struct FlopBreakdown {
  std::uint64_t patch_embed = 0;
  std::vector<std::uint64_t> stages;  // blocks plus the trailing merge
  std::uint64_t head = 0;             // final norm and classifier
  std::uint64_t total = 0;
};

/// Closed-form trainable parameter count of encoder plus classifier head.
std::uint64_t count_params(const SwinConfig& config);

/// Forward multiply-accumulates for one image at `img_size` (0 = config size).
FlopBreakdown count_flops(const SwinConfig& config, std::size_t img_size = 0);

/// "4.49G" style rendering with two decimals.
std::string format_giga(std::uint64_t value);
std::string format_mega(std::uint64_t value);

}  // namespace sldb
