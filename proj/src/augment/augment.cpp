#include "sldb/augment/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace sldb {

namespace {

void require_image(const Tensor<float>& image, const char* where) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw DimensionError(std::string(where) + ": expected [H, W, 3] image");
}

void require_same(const LabeledImage& a, const LabeledImage& b, const char* where) {
  require_image(a.image, where);
  if (a.image.shape() != b.image.shape()) throw DimensionError(std::string(where) + ": image shapes differ");
}

void check_range(const std::array<double, 2>& r, const char* name) {
  if (!(r[0] <= r[1])) throw std::invalid_argument(std::string("augment: empty range for ") + name);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

SoftLabel SoftLabel::one_hot(std::size_t label) {
  if (label >= kNumClasses) throw std::out_of_range("SoftLabel: class index out of range");
  SoftLabel s;
  s.p[label] = 1.0;
  return s;
}

double SoftLabel::sum() const {
  double total = 0;
  for (double v : p) total += v;
  return total;
}

bool SoftLabel::valid(double tol) const {
  for (double v : p)
    if (v < 0) return false;
  return std::abs(sum() - 1.0) <= tol;
}

void AugmentConfig::validate() const {
  check_range(exposure, "exposure");
  check_range(saturation, "saturation");
  check_range(noise_sigma, "noise_sigma");
  check_range(scale, "scale");
  if (exposure[0] <= 0) throw std::invalid_argument("augment: exposure factors must be positive");
  if (saturation[0] < 0) throw std::invalid_argument("augment: saturation factors must be nonnegative");
  if (hue < 0 || hue > 0.5) throw std::invalid_argument("augment: hue must be in [0, 0.5]");
  if (blur_lengths.empty()) throw std::invalid_argument("augment: blur_lengths is empty");
  for (auto len : blur_lengths)
    if (len < 3 || len % 2 == 0) throw std::invalid_argument("augment: blur lengths must be odd and >= 3");
  if (noise_sigma[0] < 0) throw std::invalid_argument("augment: noise sigma must be nonnegative");
  if (scale[0] < 0.5 || scale[1] > 2.0) throw std::invalid_argument("augment: scale range must lie in [0.5, 2]");
  if (!(alpha > 0)) throw std::invalid_argument("augment: alpha must be positive");
  if (multiplier == 0) throw std::invalid_argument("augment: multiplier must be >= 1");
}

double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0)) throw std::invalid_argument("sample_lambda: alpha must be positive");
  if (alpha == 1.0) return rng.uniform();
  return rng.beta(alpha, alpha);
}

// --- CutMix / MixUp ----------------------------------------------------------

CutBox make_cut_box(std::size_t width, std::size_t height, double lambda, double rx, double ry) {
  if (lambda < 0 || lambda > 1) throw std::invalid_argument("cutmix: lambda outside [0, 1]");
  CutBox box;
  box.rx = rx;
  box.ry = ry;
  const double cut = std::sqrt(1.0 - lambda);
  box.rw = static_cast<double>(width) * cut;
  box.rh = static_cast<double>(height) * cut;
  auto clip = [](double start, double extent, std::size_t limit, std::size_t& lo, std::size_t& hi) {
    lo = std::min(limit, static_cast<std::size_t>(std::max(0.0, std::floor(start))));
    hi = std::min(limit, lo + static_cast<std::size_t>(std::llround(extent)));
  };
  clip(rx, box.rw, width, box.x0, box.x1);
  clip(ry, box.rh, height, box.y0, box.y1);
  box.lambda_eff = 1.0 - static_cast<double>(box.area()) / static_cast<double>(width * height);
  return box;
}

CutBox sample_cut_box(std::size_t width, std::size_t height, double lambda, Rng& rng) {
  const double rx = rng.uniform(0.0, static_cast<double>(width));
  const double ry = rng.uniform(0.0, static_cast<double>(height));
  return make_cut_box(width, height, lambda, rx, ry);
}

LabeledImage cutmix(const LabeledImage& a, const LabeledImage& b, const CutBox& box) {
  require_same(a, b, "cutmix");
  const std::size_t w = a.image.dim(1);
  LabeledImage out{a.image.detach(), {}};
  for (std::size_t y = box.y0; y < box.y1; ++y)
    for (std::size_t x = box.x0; x < box.x1; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.image[(y * w + x) * 3 + c] = b.image[(y * w + x) * 3 + c];
  for (std::size_t k = 0; k < kNumClasses; ++k)
    out.label.p[k] = box.lambda_eff * a.label.p[k] + (1.0 - box.lambda_eff) * b.label.p[k];
  return out;
}

LabeledImage cutmix(const LabeledImage& a, const LabeledImage& b, double lambda, Rng& rng) {
  require_same(a, b, "cutmix");
  return cutmix(a, b, sample_cut_box(a.image.dim(1), a.image.dim(0), lambda, rng));
}

LabeledImage mixup(const LabeledImage& a, const LabeledImage& b, double lambda) {
  require_same(a, b, "mixup");
  if (lambda < 0 || lambda > 1) throw std::invalid_argument("mixup: lambda outside [0, 1]");
  LabeledImage out{a.image.detach(), {}};
  // a + (1 - l)(b - a) keeps mixup(a, a, l) == a exactly.
  const auto m = static_cast<float>(1.0 - lambda);
  for (std::size_t i = 0; i < out.image.numel(); ++i) out.image[i] = a.image[i] + m * (b.image[i] - a.image[i]);
  for (std::size_t k = 0; k < kNumClasses; ++k) out.label.p[k] = lambda * a.label.p[k] + (1.0 - lambda) * b.label.p[k];
  return out;
}

// --- Photometric ---------------------------------------------------------------

JitterFactors sample_jitter(const AugmentConfig& config, Rng& rng) {
  JitterFactors f;
  f.exposure = rng.uniform(config.exposure[0], config.exposure[1]);
  f.saturation = rng.uniform(config.saturation[0], config.saturation[1]);
  f.hue_shift = rng.uniform(-config.hue, config.hue);
  return f;
}

Tensor<float> color_jitter(const Tensor<float>& image, const JitterFactors& factors) {
  require_image(image, "color_jitter");
  Tensor<float> out = image.detach();
  const std::size_t n = image.numel() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = image[3 * i], g = image[3 * i + 1], b = image[3 * i + 2];
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double d = mx - mn;
    double h = 0;
    if (d > 0) {
      if (mx == r)
        h = std::fmod((g - b) / d, 6.0);
      else if (mx == g)
        h = (b - r) / d + 2.0;
      else
        h = (r - g) / d + 4.0;
      h /= 6.0;
    }
    double s = mx > 0 ? d / mx : 0.0;
    double v = mx;

    v = std::clamp(v * factors.exposure, 0.0, 1.0);
    s = std::clamp(s * factors.saturation, 0.0, 1.0);
    h = h + factors.hue_shift;
    h -= std::floor(h);

    const double hh = h * 6.0;
    const auto sector = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double rgb[3];
    switch (sector) {
      case 0: rgb[0] = v, rgb[1] = t, rgb[2] = p; break;
      case 1: rgb[0] = q, rgb[1] = v, rgb[2] = p; break;
      case 2: rgb[0] = p, rgb[1] = v, rgb[2] = t; break;
      case 3: rgb[0] = p, rgb[1] = q, rgb[2] = v; break;
      case 4: rgb[0] = t, rgb[1] = p, rgb[2] = v; break;
      default: rgb[0] = v, rgb[1] = p, rgb[2] = q; break;
    }
    for (int c = 0; c < 3; ++c) out[3 * i + c] = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
  }
  return out;
}

Tensor<float> motion_blur(const Tensor<float>& image, std::size_t length, double angle_degrees) {
  require_image(image, "motion_blur");
  if (length < 3 || length % 2 == 0) throw std::invalid_argument("motion_blur: length must be odd and >= 3");
  const auto h = static_cast<long>(image.dim(0)), w = static_cast<long>(image.dim(1));
  const double rad = angle_degrees * M_PI / 180.0;
  const long half = static_cast<long>(length / 2);
  std::vector<std::pair<long, long>> taps;
  for (long t = -half; t <= half; ++t)
    taps.emplace_back(std::lround(t * std::sin(rad)), std::lround(t * std::cos(rad)));
  const double weight = 1.0 / static_cast<double>(length);

  Tensor<float> out(image.shape());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc[3] = {0, 0, 0};
      for (auto [dy, dx] : taps) {
        const long sy = std::clamp(y + dy, 0L, h - 1), sx = std::clamp(x + dx, 0L, w - 1);
        const float* px = image.ptr() + (sy * w + sx) * 3;
        for (int c = 0; c < 3; ++c) acc[c] += weight * px[c];
      }
      float* dst = out.ptr() + (y * w + x) * 3;
      for (int c = 0; c < 3; ++c) dst[c] = static_cast<float>(acc[c]);
    }
  return out;
}

Tensor<float> gaussian_noise(const Tensor<float>& image, double sigma, Rng& rng) {
  if (sigma < 0) throw std::invalid_argument("gaussian_noise: sigma must be nonnegative");
  Tensor<float> out = image.detach();
  if (sigma == 0) return out;
  for (auto& v : out.data()) v = std::clamp(static_cast<float>(v + sigma * rng.normal()), 0.0f, 1.0f);
  return out;
}

// --- Geometric -----------------------------------------------------------------

Tensor<float> hflip(const Tensor<float>& image) {
  require_image(image, "hflip");
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor<float> out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out[(y * w + x) * 3 + c] = image[(y * w + (w - 1 - x)) * 3 + c];
  return out;
}

Tensor<float> rescale_centered(const Tensor<float>& image, double scale) {
  require_image(image, "rescale_centered");
  if (scale < 0.5 || scale > 2.0) throw std::invalid_argument("rescale: scale must lie in [0.5, 2]");
  const std::size_t h = image.dim(0), w = image.dim(1);
  const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(h * scale)));
  const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(w * scale)));
  if (sh == h && sw == w) return image.detach();
  const Tensor<float> scaled = resize_bilinear(image, sh, sw);
  Tensor<float> out(image.shape());
  // Offsets of the scaled image inside the output (negative = crop).
  const long oy = (static_cast<long>(h) - static_cast<long>(sh)) / 2;
  const long ox = (static_cast<long>(w) - static_cast<long>(sw)) / 2;
  for (std::size_t y = 0; y < h; ++y) {
    const long sy = static_cast<long>(y) - oy;
    if (sy < 0 || sy >= static_cast<long>(sh)) continue;
    for (std::size_t x = 0; x < w; ++x) {
      const long sx = static_cast<long>(x) - ox;
      if (sx < 0 || sx >= static_cast<long>(sw)) continue;
      for (std::size_t c = 0; c < 3; ++c)
        out[(y * w + x) * 3 + c] = scaled[(static_cast<std::size_t>(sy) * sw + static_cast<std::size_t>(sx)) * 3 + c];
    }
  }
  return out;
}

Tensor<float> hflip_random_scale(const Tensor<float>& image, const std::array<double, 2>& scale_range, Rng& rng) {
  const bool flip = rng.bernoulli(0.5);
  const double s = rng.uniform(scale_range[0], scale_range[1]);
  return rescale_centered(flip ? hflip(image) : image, s);
}

// --- Batch mixing ----------------------------------------------------------------

std::string mix_batch(Tensor<float>& images, Tensor<float>& labels, const AugmentConfig& config, Rng& rng) {
  if (!config.cutmix && !config.mixup) return "";
  if (images.rank() != 4 || labels.rank() != 2 || images.dim(0) != labels.dim(0) || labels.dim(1) != kNumClasses)
    throw DimensionError("mix_batch: expected images [N, H, W, C] and labels [N, 10]");
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2), ch = images.dim(3);
  const bool use_cutmix = config.cutmix && (!config.mixup || rng.bernoulli(0.5));
  const double lambda = sample_lambda(config.alpha, rng);
  std::vector<std::size_t> partner(n);
  for (std::size_t i = 0; i < n; ++i) partner[i] = i;
  rng.shuffle(partner.begin(), partner.end());

  const Tensor<float> src = images.detach().clone();
  const Tensor<float> src_labels = labels.detach().clone();
  const std::size_t per = h * w * ch;
  double lam = lambda;
  if (use_cutmix) {
    const CutBox box = sample_cut_box(w, h, lambda, rng);
    lam = box.lambda_eff;
    for (std::size_t i = 0; i < n; ++i) {
      const float* b = src.ptr() + partner[i] * per;
      float* dst = images.ptr() + i * per;
      for (std::size_t y = box.y0; y < box.y1; ++y)
        std::copy_n(b + (y * w + box.x0) * ch, (box.x1 - box.x0) * ch, dst + (y * w + box.x0) * ch);
    }
  } else {
    const auto m = static_cast<float>(1.0 - lambda);
    for (std::size_t i = 0; i < n; ++i) {
      const float* a = src.ptr() + i * per;
      const float* b = src.ptr() + partner[i] * per;
      float* dst = images.ptr() + i * per;
      for (std::size_t k = 0; k < per; ++k) dst[k] = a[k] + m * (b[k] - a[k]);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < kNumClasses; ++k)
      labels[i * kNumClasses + k] = static_cast<float>(lam * src_labels[i * kNumClasses + k] +
                                                       (1.0 - lam) * src_labels[partner[i] * kNumClasses + k]);
  return use_cutmix ? "cutmix" : "mixup";
}

// --- Offline expansion -------------------------------------------------------------

ExpansionResult expand_dataset(const DatasetIndex& index, const AugmentConfig& config, std::uint64_t seed,
                               const std::filesystem::path& out_dir, std::size_t resize_to) {
  namespace fs = std::filesystem;
  config.validate();
  std::error_code ec;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const fs::path dir = out_dir / ("c" + std::to_string(c));
    fs::create_directories(dir, ec);
    if (ec) throw FileError(dir, "cannot create directory: " + ec.message());
  }
  ExpansionResult result;
  result.index.root = out_dir;
  result.manifest = out_dir / "manifest.tsv";
  std::ofstream manifest(result.manifest);
  if (!manifest) throw FileError(result.manifest, "cannot open for writing");
  manifest << "output\tsource\tstrategy\tparams\tseed\n";

  const Rng base(seed);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& rec = index.records[i];
    Tensor<float> img = load_ppm(rec.path);
    if (resize_to > 0) img = resize_bilinear(img, resize_to, resize_to);
    Rng rng = base.derive(i);
    const fs::path dir = out_dir / ("c" + std::to_string(rec.label));
    const std::string stem = rec.path.stem().string();

    auto emit = [&](const std::string& suffix, const Tensor<float>& out, const std::string& strategy,
                    const std::string& params) {
      const fs::path path = dir / (stem + suffix + ".ppm");
      save_ppm(path, out);
      result.index.records.push_back({path, rec.label, out.dim(1), out.dim(0)});
      manifest << path.string() << '\t' << rec.path.string() << '\t' << strategy << '\t' << params << '\t'
               << rng.seed() << '\n';
      ++result.written;
    };

    emit("", img, "copy", "-");
    for (std::size_t m = 0; m < config.multiplier; ++m) {
      const std::string tag = std::to_string(m);
      if (config.color_jitter) {
        const auto f = sample_jitter(config, rng);
        emit("__jitter" + tag, color_jitter(img, f), "color_jitter",
             "exposure=" + fmt(f.exposure) + ";saturation=" + fmt(f.saturation) + ";hue=" + fmt(f.hue_shift));
      }
      if (config.motion_blur) {
        const auto len = config.blur_lengths[rng.uniform_int(config.blur_lengths.size())];
        const double angle = rng.uniform(0.0, 180.0);
        emit("__blur" + tag, motion_blur(img, len, angle), "motion_blur",
             "length=" + std::to_string(len) + ";angle=" + fmt(angle));
      }
      if (config.gaussian_noise) {
        const double sigma = rng.uniform(config.noise_sigma[0], config.noise_sigma[1]);
        emit("__noise" + tag, gaussian_noise(img, sigma, rng), "gaussian_noise", "sigma=" + fmt(sigma));
      }
      if (config.hflip_scale) {
        const bool flip = rng.bernoulli(0.5);
        const double s = rng.uniform(config.scale[0], config.scale[1]);
        emit("__flipscale" + tag, rescale_centered(flip ? hflip(img) : img, s), "hflip_scale",
             std::string("flip=") + (flip ? "1" : "0") + ";scale=" + fmt(s));
      }
    }
  }
  manifest.flush();
  if (!manifest) throw FileError(result.manifest, "write failed");
  return result;
}

}  // namespace sldb
