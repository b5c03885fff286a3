#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "sldb/augment/augment.hpp"

namespace sldb {
namespace {

namespace fs = std::filesystem;

Tensor<float> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> img({h, w, 3});
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

LabeledImage labeled(std::size_t h, std::size_t w, std::uint64_t seed, std::size_t label) {
  return {random_image(h, w, seed), SoftLabel::one_hot(label)};
}

double ks_uniform(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    d = std::max(d, (static_cast<double>(i) + 1) / n - xs[i]);
    d = std::max(d, xs[i] - static_cast<double>(i) / n);
  }
  return d;
}

TEST(Lambda, UniformAtAlphaOne) {
  Rng rng(5);
  std::vector<double> xs(10000);
  for (auto& x : xs) x = sample_lambda(1.0, rng);
  EXPECT_LT(ks_uniform(xs), 0.02);
}

TEST(Lambda, SymmetricMean) {
  for (double alpha : {0.2, 1.0, 4.0, 100.0}) {
    Rng rng(11);
    double sum = 0;
    for (int i = 0; i < 10000; ++i) {
      const double l = sample_lambda(alpha, rng);
      ASSERT_GE(l, 0.0);
      ASSERT_LE(l, 1.0);
      sum += l;
    }
    EXPECT_NEAR(sum / 10000, 0.5, 0.02) << alpha;
  }
  Rng rng(3);
  EXPECT_THROW(sample_lambda(0.0, rng), std::invalid_argument);
}

TEST(CutBox, ExtentFormula) {
  auto box = make_cut_box(32, 32, 0.75, 4.0, 4.0);
  EXPECT_EQ(box.rw, 16.0);
  EXPECT_EQ(box.rh, 16.0);
  EXPECT_EQ(box.area(), 256u);
  EXPECT_DOUBLE_EQ(box.lambda_eff, 0.75);
  auto none = make_cut_box(32, 32, 1.0, 10.0, 10.0);
  EXPECT_EQ(none.rw, 0.0);
  EXPECT_EQ(none.area(), 0u);
}

TEST(CutBox, UnclippedAreaMatchesLambda) {
  Rng rng(17);
  const std::size_t w = 48, h = 40;
  int checked = 0;
  for (int trial = 0; trial < 2000 && checked < 300; ++trial) {
    const double lambda = rng.uniform();
    auto box = sample_cut_box(w, h, lambda, rng);
    if (box.rx + box.rw > w - 1 || box.ry + box.rh > h - 1) continue;
    ++checked;
    // Count mask pixels directly from the cutmix output.
    LabeledImage a{Tensor<float>({h, w, 3}, 0.0f), SoftLabel::one_hot(0)};
    LabeledImage b{Tensor<float>({h, w, 3}, 1.0f), SoftLabel::one_hot(1)};
    auto out = cutmix(a, b, box);
    std::size_t count = 0;
    for (std::size_t i = 0; i < h * w; ++i) count += out.image[3 * i] == 1.0f;
    const double frac = static_cast<double>(count) / static_cast<double>(w * h);
    // Rounding each extent moves it by at most half a pixel.
    const double bound = (0.5 * box.rw + 0.5 * box.rh + 0.25) / static_cast<double>(w * h) + 1e-12;
    EXPECT_NEAR(frac, 1.0 - lambda, bound);
    EXPECT_NEAR(out.label.p[0], 1.0 - frac, 1e-12);
  }
  EXPECT_GE(checked, 100);
}

TEST(CutMix, PixelIdentityAndLabels) {
  auto a = labeled(20, 24, 1, 2), b = labeled(20, 24, 2, 7);
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto box = sample_cut_box(24, 20, rng.uniform(), rng);
    auto out = cutmix(a, b, box);
    for (std::size_t y = 0; y < 20; ++y)
      for (std::size_t x = 0; x < 24; ++x) {
        const bool inside = y >= box.y0 && y < box.y1 && x >= box.x0 && x < box.x1;
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t i = (y * 24 + x) * 3 + c;
          ASSERT_EQ(out.image[i], inside ? b.image[i] : a.image[i]);
        }
      }
    EXPECT_TRUE(out.label.valid());
    EXPECT_DOUBLE_EQ(out.label.p[2], box.lambda_eff);
  }
  auto same = cutmix(a, b, 1.0, rng);
  EXPECT_TRUE(bitwise_equal(same.image, a.image));
  EXPECT_EQ(same.label.p[2], 1.0);
  EXPECT_THROW(cutmix(a, labeled(20, 20, 3, 0), 0.5, rng), DimensionError);
}

TEST(MixUp, Examples) {
  LabeledImage a{Tensor<float>({1, 1, 3}, 10.0f), SoftLabel::one_hot(2)};
  LabeledImage b{Tensor<float>({1, 1, 3}, 20.0f), SoftLabel::one_hot(5)};
  auto half = mixup(a, b, 0.5);
  EXPECT_EQ(half.image[0], 15.0f);
  auto seven = mixup(a, b, 0.7);
  EXPECT_NEAR(seven.label.p[2], 0.7, 1e-15);
  EXPECT_NEAR(seven.label.p[5], 0.3, 1e-15);
  EXPECT_TRUE(seven.label.valid());

  auto x = labeled(6, 5, 4, 1), y = labeled(6, 5, 5, 3);
  EXPECT_TRUE(bitwise_equal(mixup(x, y, 1.0).image, x.image));
  for (double l : {0.0, 0.13, 0.5, 0.99}) EXPECT_TRUE(bitwise_equal(mixup(x, x, l).image, x.image));
  EXPECT_THROW(mixup(x, labeled(5, 5, 1, 1), 0.5), DimensionError);
}

TEST(Jitter, IdentityAndHandValues) {
  auto img = random_image(8, 8, 9);
  auto same = color_jitter(img, {});
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(same[i], img[i], 1e-6);

  auto gray = color_jitter(Tensor<float>({1, 1, 3}, 0.25f), {2.0, 1.0, 0.0});
  for (int c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(gray[static_cast<std::size_t>(c)], 0.5f);

  auto cyan = color_jitter(Tensor<float>({1, 1, 3}, std::vector<float>{1, 0, 0}), {1.0, 1.0, 0.5});
  EXPECT_NEAR(cyan[0], 0.0f, 1e-6);
  EXPECT_NEAR(cyan[1], 1.0f, 1e-6);
  EXPECT_NEAR(cyan[2], 1.0f, 1e-6);

  AugmentConfig cfg;
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    auto out = color_jitter(img, sample_jitter(cfg, rng));
    for (float v : out.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Blur, SinglePixelAndConservation) {
  Tensor<float> img({5, 5, 3}, 0.0f);
  for (std::size_t c = 0; c < 3; ++c) img[(2 * 5 + 2) * 3 + c] = 1.0f;
  auto out = motion_blur(img, 3, 0.0);
  for (std::size_t x = 0; x < 5; ++x) {
    const float expect = (x >= 1 && x <= 3) ? 1.0f / 3.0f : 0.0f;
    EXPECT_NEAR(out[(2 * 5 + x) * 3], expect, 1e-7);
  }
  EXPECT_EQ(out[(1 * 5 + 2) * 3], 0.0f);

  auto flat = motion_blur(Tensor<float>({6, 7, 3}, 0.4f), 7, 33.0);
  for (float v : flat.data()) EXPECT_NEAR(v, 0.4f, 1e-6);

  // Interior mass is conserved when the kernel never reaches the border.
  Tensor<float> dot({15, 15, 3}, 0.0f);
  dot[(7 * 15 + 7) * 3] = 1.0f;
  for (double angle : {0.0, 30.0, 45.0, 90.0, 135.0}) {
    auto b = motion_blur(dot, 9, angle);
    double total = 0;
    for (std::size_t i = 0; i < 15 * 15; ++i) total += b[3 * i];
    EXPECT_NEAR(total, 1.0, 1e-6) << angle;
  }
  EXPECT_THROW(motion_blur(img, 4, 0.0), std::invalid_argument);
}

TEST(Noise, StatisticsAndDeterminism) {
  Tensor<float> gray({100, 100, 3}, 0.5f);
  Rng r0(3);
  EXPECT_TRUE(bitwise_equal(gaussian_noise(gray, 0.0, r0), gray));
  const double sigma = 0.03;
  Rng rng(42);
  // 100 * 100 * 3 * 4 > 1e5 elements
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (int rep = 0; rep < 4; ++rep) {
    auto out = gaussian_noise(gray, sigma, rng);
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const double d = out[i] - gray[i];
      sum += d;
      sq += d * d;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  EXPECT_NEAR(sd, sigma, 0.1 * sigma);
  Rng a(9), b(9);
  EXPECT_TRUE(bitwise_equal(gaussian_noise(gray, sigma, a), gaussian_noise(gray, sigma, b)));
}

TEST(FlipScale, Involution) {
  auto img = random_image(7, 9, 4);
  EXPECT_TRUE(bitwise_equal(hflip(hflip(img)), img));
  EXPECT_TRUE(bitwise_equal(rescale_centered(img, 1.0), img));
  EXPECT_EQ(hflip(img)[0], img[8 * 3]);
  Rng rng(2);
  auto same = hflip_random_scale(img, {1.0, 1.0}, rng);
  EXPECT_TRUE(bitwise_equal(same, img) || bitwise_equal(same, hflip(img)));
}

TEST(FlipScale, HalfScaleSquare) {
  Tensor<float> img({8, 8, 3}, 0.0f);
  for (std::size_t y = 3; y <= 4; ++y)
    for (std::size_t x = 3; x <= 4; ++x)
      for (std::size_t c = 0; c < 3; ++c) img[(y * 8 + x) * 3 + c] = 1.0f;
  auto out = rescale_centered(img, 0.5);
  // The four-pixel square shrinks to one pixel of mass, centred and symmetric.
  double mass = 0;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const float v = out[(y * 8 + x) * 3];
      mass += v;
      const bool centre = y >= 3 && y <= 4 && x >= 3 && x <= 4;
      EXPECT_FLOAT_EQ(v, centre ? 0.25f : 0.0f) << y << "," << x;
    }
  EXPECT_DOUBLE_EQ(mass, 1.0);
  auto big = rescale_centered(img, 2.0);
  EXPECT_EQ(big.shape(), img.shape());
  EXPECT_EQ(big[(4 * 8 + 4) * 3], 1.0f);
  EXPECT_EQ(big[0], 0.0f);
}

TEST(MixBatch, LabelsStayDistributions) {
  Tensor<float> images({6, 8, 8, 3});
  Rng fill(1);
  for (auto& v : images.data()) v = static_cast<float>(fill.uniform());
  AugmentConfig cfg;
  cfg.cutmix = cfg.mixup = true;
  Rng rng(4);
  std::map<std::string, int> seen;
  for (int trial = 0; trial < 40; ++trial) {
    Tensor<float> labels({6, kNumClasses}, 0.0f);
    for (std::size_t i = 0; i < 6; ++i) labels[i * kNumClasses + i] = 1.0f;
    Tensor<float> imgs = images.clone();
    ++seen[mix_batch(imgs, labels, cfg, rng)];
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        ASSERT_GE(labels[i * kNumClasses + k], 0.0f);
        s += labels[i * kNumClasses + k];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  EXPECT_GT(seen["cutmix"], 5);
  EXPECT_GT(seen["mixup"], 5);
  AugmentConfig off;
  Tensor<float> labels({6, kNumClasses}, 0.1f);
  Tensor<float> imgs = images.clone();
  EXPECT_EQ(mix_batch(imgs, labels, off, rng), "");
  EXPECT_TRUE(bitwise_equal(imgs, images));
}

TEST(Config, Validation) {
  AugmentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.alpha = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.blur_lengths = {4};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.scale = {1.2, 0.8};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sldb_augment_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::size_t manifest_rows(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  std::getline(in, line);
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

TEST(Expand, CopyOnly) {
  const auto dir = scratch("copy");
  auto index = write_synthetic_dataset(dir / "src", 2, 8, 1);
  auto result = expand_dataset(index, AugmentConfig{}, 5, dir / "out");
  ASSERT_EQ(result.index.size(), index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    EXPECT_EQ(result.index.records[i].label, index.records[i].label);
    EXPECT_TRUE(bitwise_equal(load_ppm(result.index.records[i].path), load_ppm(index.records[i].path)));
  }
  EXPECT_EQ(manifest_rows(result.manifest), index.size());
}

TEST(Expand, CountsScaleUniformly) {
  const auto dir = scratch("scale");
  auto index = write_synthetic_dataset(dir / "src", 3, 8, 2);
  AugmentConfig cfg;
  cfg.gaussian_noise = true;
  auto one = expand_dataset(index, cfg, 5, dir / "one");
  EXPECT_EQ(one.written, 2 * index.size());
  for (auto n : one.index.class_counts()) EXPECT_EQ(n, 6u);

  cfg.color_jitter = cfg.motion_blur = cfg.hflip_scale = true;
  cfg.multiplier = 2;
  auto all = expand_dataset(index, cfg, 5, dir / "all");
  EXPECT_EQ(all.written, index.size() * 9);
  // Recount from the manifest and from the directory tree.
  EXPECT_EQ(manifest_rows(all.manifest), all.written);
  auto rescanned = index_dataset(dir / "all");
  for (auto n : rescanned.class_counts()) EXPECT_EQ(n, 27u);

  auto again = expand_dataset(index, cfg, 5, dir / "again");
  for (std::size_t i = 0; i < all.index.size(); ++i)
    ASSERT_TRUE(bitwise_equal(load_ppm(all.index.records[i].path), load_ppm(again.index.records[i].path)));
}

TEST(Expand, ResizesFirst) {
  const auto dir = scratch("resize");
  auto index = write_synthetic_dataset(dir / "src", 1, 12, 3);
  AugmentConfig cfg;
  cfg.motion_blur = true;
  auto result = expand_dataset(index, cfg, 1, dir / "out", 6);
  for (const auto& r : result.index.records) EXPECT_EQ(r.width, 6u);
}

}  // namespace
}  // namespace sldb
