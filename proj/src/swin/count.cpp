#include "sldb/swin/count.hpp"

#include <cstdio>

namespace sldb {

std::uint64_t count_attention_flops(AttentionKind kind, std::size_t h, std::size_t w,
                                    std::size_t channels, std::size_t window) {
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w, c = channels;
  const std::uint64_t projections = 4 * hw * c * c;
  if (kind == AttentionKind::kGlobal) return projections + 2 * hw * hw * c;
  const std::uint64_t m = window;
  return projections + 2 * m * m * hw * c;
}

std::uint64_t count_params(const SwinConfig& config) {
  config.validate();
  const std::uint64_t c = config.embed_dim;
  std::uint64_t total = kPatchSize * kPatchSize * config.in_channels * c + c + 2 * c;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto g = config.stage_geometry(s);
    const std::uint64_t dim = g.channels, hidden = config.mlp_hidden(dim);
    const std::uint64_t side = 2 * g.window - 1;
    const std::uint64_t block = 2 * dim                       // norm1
                                + dim * 3 * dim + 3 * dim      // qkv
                                + dim * dim + dim              // proj
                                + side * side * g.heads        // bias table
                                + 2 * dim                      // norm2
                                + dim * hidden + hidden        // fc1
                                + hidden * dim + dim;          // fc2
    total += block * config.depths[s];
    if (s + 1 < kNumStages) total += 2 * 4 * dim + 4 * dim * 2 * dim;
  }
  const std::uint64_t f = config.final_channels();
  total += 2 * f;
  if (config.num_classes) total += f * config.num_classes + config.num_classes;
  return total;
}

FlopBreakdown count_flops(const SwinConfig& base, std::size_t img_size) {
  SwinConfig config = base;
  if (img_size) config.img_size = img_size;
  config.validate();
  FlopBreakdown out;
  const std::uint64_t c = config.embed_dim;
  const std::uint64_t r0 = config.stage_resolution(0);
  out.patch_embed = r0 * r0 * c * kPatchSize * kPatchSize * config.in_channels + r0 * r0 * c;
  out.total = out.patch_embed;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto g = config.stage_geometry(s);
    const std::uint64_t res = g.resolution, dim = g.channels, hw = res * res;
    const std::uint64_t hidden = config.mlp_hidden(dim);
    // Windows tile the padded map, so attention is charged on padded extents.
    const std::uint64_t attn =
        count_attention_flops(AttentionKind::kWindowed, g.padded, g.padded, dim, g.window);
    const std::uint64_t block = hw * dim + attn + 2 * hw * dim * hidden + hw * dim;
    std::uint64_t stage = block * config.depths[s];
    if (s + 1 < kNumStages) stage += hw * dim + (hw / 4) * 4 * dim * 2 * dim;
    out.stages.push_back(stage);
    out.total += stage;
  }
  const std::uint64_t rf = config.stage_resolution(kNumStages - 1), f = config.final_channels();
  out.head = f * rf * rf + f * config.num_classes;
  out.total += out.head;
  return out;
}

namespace {
std::string format_scaled(std::uint64_t value, double unit, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%s", static_cast<double>(value) / unit, suffix);
  return buf;
}
}  // namespace

std::string format_giga(std::uint64_t value) { return format_scaled(value, 1e9, "G"); }
std::string format_mega(std::uint64_t value) { return format_scaled(value, 1e6, "M"); }

}  // namespace sldb
