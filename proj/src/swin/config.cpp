#include "sldb/swin/config.hpp"

namespace sldb {

StageGeometry SwinConfig::stage_geometry(std::size_t stage) const {
  StageGeometry g{};
  g.resolution = stage_resolution(stage);
  g.channels = stage_channels(stage);
  g.heads = heads[stage];
  if (g.resolution <= window_size) {
    // One window spans the whole map; shifting would only wrap it onto itself.
    g.window = g.resolution;
    g.shift = 0;
  } else {
    g.window = window_size;
    g.shift = shift();
  }
  g.padded = (g.resolution + g.window - 1) / g.window * g.window;
  return g;
}

void SwinConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("swin config: " + what); };
  if (in_channels != 3) fail("in_channels must be 3");
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (window_size == 0) fail("window_size must be positive");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  if (shift() >= window_size) fail("shift_size must be smaller than window_size");
  if (drop_path_rate < 0.0 || drop_path_rate >= 1.0) fail("drop_path_rate must be in [0, 1)");
  const std::size_t stride = kPatchSize << (kNumStages - 1);
  if (img_size == 0 || img_size % stride != 0) {
    fail("img_size " + std::to_string(img_size) + " must be a positive multiple of " +
         std::to_string(stride));
  }
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto stage = std::to_string(s + 1);
    if (depths[s] == 0 || depths[s] % 2 != 0) {
      fail("stage " + stage + " depth " + std::to_string(depths[s]) +
           " must be even (blocks come in W-MSA/SW-MSA pairs)");
    }
    if (heads[s] == 0 || stage_channels(s) % heads[s] != 0) {
      fail("stage " + stage + " channels " + std::to_string(stage_channels(s)) +
           " not divisible by " + std::to_string(heads[s]) + " heads");
    }
  }
}

SwinConfig SwinConfig::sl_ddbd() {
  SwinConfig c;
  c.img_size = 224;
  c.embed_dim = 96;
  c.depths = {2, 2, 6, 2};
  c.heads = {3, 6, 12, 24};
  c.window_size = 7;
  return c;
}

SwinConfig SwinConfig::baseline() {
  SwinConfig c;
  c.img_size = 224;
  c.embed_dim = 128;
  c.depths = {2, 2, 18, 2};
  c.heads = {4, 8, 16, 32};
  c.window_size = 7;
  return c;
}

SwinConfig SwinConfig::tiny() {
  SwinConfig c;
  c.img_size = 64;
  c.embed_dim = 16;
  c.depths = {2, 2, 2, 2};
  c.heads = {2, 2, 4, 4};
  c.window_size = 4;
  return c;
}

}  // namespace sldb
