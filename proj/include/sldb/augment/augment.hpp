#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sldb/data/data.hpp"
#include "sldb/numerics/rng.hpp"
#include "sldb/numerics/tensor.hpp"

namespace sldb {

/// Probability vector over the ten classes.
struct SoftLabel {
  std::array<double, kNumClasses> p{};

  static SoftLabel one_hot(std::size_t label);
  double sum() const;
  bool valid(double tol = 1e-6) const;
};

struct LabeledImage {
  Tensor<float> image;  // [H, W, 3]
  SoftLabel label;
};

struct AugmentConfig {
  bool color_jitter = false;
  bool motion_blur = false;
  bool gaussian_noise = false;
  bool hflip_scale = false;
  bool cutmix = false;
  bool mixup = false;

  std::array<double, 2> exposure{0.6, 1.4};
  std::array<double, 2> saturation{0.6, 1.4};
  double hue = 0.1;  // shift drawn from [-hue, hue]
  std::vector<std::size_t> blur_lengths{3, 5, 7, 9};
  std::array<double, 2> noise_sigma{0.01, 0.05};
  std::array<double, 2> scale{0.8, 1.2};
  double alpha = 1.0;             // Beta(alpha, alpha) for CutMix/MixUp
  std::size_t multiplier = 1;     // offline copies per enabled strategy

  void validate() const;
};

/// Draw from Beta(alpha, alpha).
double sample_lambda(double alpha, Rng& rng);

/// Sampled CutMix box. rx, ry are the top-left corner in pixels; rw, rh the
/// unclipped extents W*sqrt(1-lambda), H*sqrt(1-lambda).
struct CutBox {
  double rx = 0, ry = 0, rw = 0, rh = 0;
  // Pixel box after rounding the extents and clipping to the image.
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double lambda_eff = 1.0;  // 1 - clipped area / image area

  std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};

CutBox sample_cut_box(std::size_t width, std::size_t height, double lambda, Rng& rng);
/// Box with a given top-left corner (used by sample_cut_box).
CutBox make_cut_box(std::size_t width, std::size_t height, double lambda, double rx, double ry);

/// Pixels of `b` inside the box replace those of `a`; label mixed by lambda_eff.
LabeledImage cutmix(const LabeledImage& a, const LabeledImage& b, const CutBox& box);
LabeledImage cutmix(const LabeledImage& a, const LabeledImage& b, double lambda, Rng& rng);
LabeledImage mixup(const LabeledImage& a, const LabeledImage& b, double lambda);

struct JitterFactors {
  double exposure = 1.0;    // multiplies V
  double saturation = 1.0;  // multiplies S
  double hue_shift = 0.0;   // added to H modulo 1
};

JitterFactors sample_jitter(const AugmentConfig& config, Rng& rng);
Tensor<float> color_jitter(const Tensor<float>& image, const JitterFactors& factors);

/// Convolution with a normalized line kernel of odd `length` at
/// `angle_degrees` (0 = horizontal), replicating edge pixels.
Tensor<float> motion_blur(const Tensor<float>& image, std::size_t length, double angle_degrees);

Tensor<float> gaussian_noise(const Tensor<float>& image, double sigma, Rng& rng);

Tensor<float> hflip(const Tensor<float>& image);
/// Bilinear rescale by `scale`, then centre crop or zero pad to the original extent.
Tensor<float> rescale_centered(const Tensor<float>& image, double scale);
/// Flips with probability 0.5 and rescales by a factor drawn from `scale_range`.
Tensor<float> hflip_random_scale(const Tensor<float>& image, const std::array<double, 2>& scale_range,
                                 Rng& rng);

/// Batch-level mixing for fine-tuning: each sample is paired with a shuffled
/// partner. With both CutMix and MixUp enabled one of them is picked per
/// batch with probability 0.5. Returns "cutmix", "mixup" or "" (untouched).
std::string mix_batch(Tensor<float>& images, Tensor<float>& labels, const AugmentConfig& config,
                      Rng& rng);

struct ExpansionResult {
  DatasetIndex index;
  std::size_t written = 0;
  std::filesystem::path manifest;
};

/// Writes a copy of every image plus `multiplier` variants per enabled
/// offline strategy under out_dir/c0..c9, and a manifest.tsv with one
/// "output<TAB>source<TAB>strategy<TAB>params<TAB>seed" line per written file.
/// Images are resized to `resize_to` first when it is nonzero.
ExpansionResult expand_dataset(const DatasetIndex& index, const AugmentConfig& config,
                               std::uint64_t seed, const std::filesystem::path& out_dir,
                               std::size_t resize_to = 0);

}  // namespace sldb
