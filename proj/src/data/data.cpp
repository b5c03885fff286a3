#include "sldb/data/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "sldb/numerics/rng.hpp"

namespace sldb {

DecodeError::DecodeError(const std::string& path, std::size_t offset, const std::string& what)
    : std::runtime_error(path + ": byte " + std::to_string(offset) + ": " + what),
      path_(path),
      offset_(offset) {}

FileError::FileError(const std::filesystem::path& path, const std::string& what)
    : std::runtime_error(path.string() + ": " + what), path_(path) {}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(path, "cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError(path, "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError(path, "write failed");
}

struct PpmHeader {
  std::size_t width = 0, height = 0, data_offset = 0;
};

// Parses "P6 <w> <h> <maxval>" with '#' comments, ending on one whitespace byte.
PpmHeader parse_header(const std::uint8_t* bytes, std::size_t size, const std::string& path) {
  if (size < 2) throw DecodeError(path, size, "file too short for a PPM magic number");
  if (bytes[0] != 'P' || bytes[1] != '6') {
    throw DecodeError(path, 0, "expected binary PPM magic \"P6\"");
  }
  std::size_t pos = 2;
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  auto next_number = [&](const char* what) {
    while (pos < size) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < size && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    if (pos >= size) throw DecodeError(path, pos, std::string("truncated header before ") + what);
    if (bytes[pos] < '0' || bytes[pos] > '9') {
      throw DecodeError(path, pos, std::string("expected digits for ") + what);
    }
    std::size_t value = 0;
    while (pos < size && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos] - '0');
      if (value > (1u << 24)) throw DecodeError(path, pos, std::string(what) + " too large");
      ++pos;
    }
    return value;
  };
  PpmHeader h;
  h.width = next_number("width");
  h.height = next_number("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = next_number("maxval");
  if (maxval != 255) {
    throw DecodeError(path, maxval_at, "maxval " + std::to_string(maxval) + " is not 255");
  }
  if (pos >= size || !is_space(bytes[pos])) {
    throw DecodeError(path, pos, "missing whitespace after maxval");
  }
  h.data_offset = pos + 1;
  if (h.width == 0 || h.height == 0) throw DecodeError(path, 2, "zero image extent");
  return h;
}

}  // namespace

Tensor<float> decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  const auto h = parse_header(bytes.data(), bytes.size(), path);
  const std::size_t need = h.width * h.height * 3;
  if (bytes.size() - h.data_offset < need) {
    throw DecodeError(path, bytes.size(),
                      "pixel data ends early: expected " + std::to_string(need) + " bytes from offset " +
                          std::to_string(h.data_offset));
  }
  Tensor<float> img({h.height, h.width, 3});
  for (std::size_t i = 0; i < need; ++i) img[i] = static_cast<float>(bytes[h.data_offset + i]) / 255.0f;
  return img;
}

Tensor<float> load_ppm(const std::filesystem::path& path) {
  return decode_ppm(read_file(path), path.string());
}

std::array<std::size_t, 2> ppm_size(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(path, "cannot open for reading");
  std::vector<std::uint8_t> head(512);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const auto h = parse_header(head.data(), head.size(), path.string());
  return {h.width, h.height};
}

std::vector<std::uint8_t> encode_ppm(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("encode_ppm: expected [H,W,3], got " + shape_str(image.shape()));
  }
  const std::string header =
      "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.numel());
  for (float v : image.data()) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0f)));
  }
  return out;
}

void save_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  write_file(path, encode_ppm(image));
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) {
    throw DimensionError("resize_bilinear: expected [H,W,C], got " + shape_str(image.shape()));
  }
  if (height == 0 || width == 0) throw DimensionError("resize_bilinear: empty target");
  const std::size_t ih = image.dim(0), iw = image.dim(1), c = image.dim(2);
  if (ih == height && iw == width) return image.detach();
  Tensor<float> out({height, width, c});
  auto axis = [](std::size_t dst, std::size_t in, std::size_t out_n, std::size_t& lo,
                 std::size_t& hi, double& frac) {
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                     static_cast<double>(out_n) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(src));
    hi = std::min(lo + 1, in - 1);
    frac = src - static_cast<double>(lo);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, ih, height, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      axis(x, iw, width, x0, x1, fx);
      for (std::size_t k = 0; k < c; ++k) {
        const double top = (1 - fx) * image[(y0 * iw + x0) * c + k] + fx * image[(y0 * iw + x1) * c + k];
        const double bot = (1 - fx) * image[(y1 * iw + x0) * c + k] + fx * image[(y1 * iw + x1) * c + k];
        out[(y * width + x) * c + k] = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

const std::array<std::string_view, kNumClasses>& class_names() {
  static const std::array<std::string_view, kNumClasses> names{
      "Normal driving",
      "Texting - right",
      "Talking on the phone - right",
      "Texting - left",
      "Talking on the phone - left",
      "Operating the radio",
      "Drinking",
      "Reaching behind",
      "Hair and makeup",
      "Talking to passenger"};
  return names;
}

std::array<std::size_t, kNumClasses> DatasetIndex::class_counts() const {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& r : records) ++counts.at(r.label);
  return counts;
}

DatasetIndex index_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw FileError(root, "dataset root is not a directory");
  DatasetIndex index;
  index.root = root;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const fs::path dir = root / ("c" + std::to_string(c));
    if (!fs::is_directory(dir)) throw FileError(dir, "missing class directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) {
      const auto size = ppm_size(f);
      index.records.push_back({std::move(f), c, size[0], size[1]});
    }
  }
  return index;
}

std::size_t split_train_count(std::size_t class_count, double train_fraction) {
  const auto n = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(class_count)));
  return std::min(n, class_count);
}

DatasetSplit split_dataset(const DatasetIndex& index, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw std::invalid_argument("split: train fraction must lie in (0, 1]");
  }
  DatasetSplit split;
  split.train.root = split.test.root = index.root;
  const Rng base(seed);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < index.records.size(); ++i) {
      if (index.records[i].label == c) members.push_back(i);
    }
    Rng rng = base.derive(c);
    rng.shuffle(members.begin(), members.end());
    const std::size_t n_train = split_train_count(members.size(), train_fraction);
    // Keep index order inside each side so manifests read naturally.
    std::sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    for (std::size_t k = 0; k < members.size(); ++k) {
      (k < n_train ? split.train : split.test).records.push_back(index.records[members[k]]);
    }
  }
  return split;
}

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError(path, "cannot open for writing");
  for (const auto* side : {&split.train, &split.test}) {
    const char* tag = side == &split.train ? "train" : "test";
    for (const auto& r : side->records) out << r.path.string() << '\t' << r.label << '\t' << tag << '\n';
  }
  if (!out) throw FileError(path, "write failed");
}

DatasetSplit read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(path, "cannot open for reading");
  DatasetSplit split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t'), t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw FileError(path, "line " + std::to_string(line_no) + ": expected three tab-separated fields");
    }
    ImageRecord r;
    r.path = line.substr(0, t1);
    r.label = static_cast<std::size_t>(std::stoul(line.substr(t1 + 1, t2 - t1 - 1)));
    if (r.label >= kNumClasses) {
      throw FileError(path, "line " + std::to_string(line_no) + ": class out of range");
    }
    const std::string tag = line.substr(t2 + 1);
    if (tag == "train") {
      split.train.records.push_back(std::move(r));
    } else if (tag == "test") {
      split.test.records.push_back(std::move(r));
    } else {
      throw FileError(path, "line " + std::to_string(line_no) + ": unknown split \"" + tag + "\"");
    }
  }
  return split;
}

void normalize_inplace(Tensor<float>& images, const Normalization& norm) {
  if (images.shape().empty() || images.shape().back() != 3) {
    throw DimensionError("normalize: expected trailing 3 channels, got " + shape_str(images.shape()));
  }
  for (std::size_t i = 0; i < images.numel(); ++i) {
    const std::size_t c = i % 3;
    images[i] = (images[i] - norm.mean[c]) / norm.stddev[c];
  }
}

ChannelStats compute_channel_stats(const DatasetIndex& index, std::size_t img_size) {
  ChannelStats s;
  std::array<double, 3> sum{}, sq{};
  for (const auto& r : index.records) {
    auto img = load_ppm(r.path);
    if (img_size) img = resize_bilinear(img, img_size, img_size);
    for (std::size_t i = 0; i < img.numel(); ++i) {
      sum[i % 3] += img[i];
      sq[i % 3] += static_cast<double>(img[i]) * img[i];
    }
    s.pixels += img.numel() / 3;
  }
  if (s.pixels == 0) return s;
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / static_cast<double>(s.pixels);
    s.stddev[c] = std::sqrt(std::max(0.0, sq[c] / static_cast<double>(s.pixels) - s.mean[c] * s.mean[c]));
  }
  return s;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch,
                                                    bool shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng = Rng(seed).derive(epoch);
    rng.shuffle(order.begin(), order.end());
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  }
  return batches;
}

BatchLoader::BatchLoader(DatasetIndex index, std::size_t img_size, Normalization norm)
    : index_(std::move(index)), img_size_(img_size), norm_(norm), cache_(index_.size()) {
  if (img_size_ == 0) throw std::invalid_argument("batch loader: image size must be positive");
}

const Tensor<float>& BatchLoader::image(std::size_t i) {
  auto& slot = cache_.at(i);
  if (!slot.defined()) {
    auto img = load_ppm(index_.records[i].path);
    if (img.dim(0) != img_size_ || img.dim(1) != img_size_) img = resize_bilinear(img, img_size_, img_size_);
    slot = std::move(img);
  }
  return slot;
}

Batch BatchLoader::load(const std::vector<std::size_t>& members) {
  if (members.empty()) throw std::invalid_argument("batch loader: empty batch");
  const std::size_t per = img_size_ * img_size_ * 3;
  Batch b;
  b.images = Tensor<float>({members.size(), img_size_, img_size_, 3});
  b.labels = Tensor<float>({members.size(), kNumClasses});
  b.indices = members;
  for (std::size_t k = 0; k < members.size(); ++k) {
    const auto& img = image(members[k]);
    std::copy_n(img.ptr(), per, b.images.ptr() + k * per);
    b.labels[k * kNumClasses + index_.records[members[k]].label] = 1.0f;
  }
  normalize_inplace(b.images, norm_);
  return b;
}

Tensor<float> synthetic_pattern(std::size_t label, std::size_t img_size) {
  if (label >= kNumClasses) throw std::invalid_argument("synthetic: class out of range");
  // Ten hues around the colour wheel, alternating stripe direction.
  const double hue = static_cast<double>(label) / kNumClasses * 6.0;
  const double f = hue - std::floor(hue);
  const double v = 0.85, p = 0.15, q = v - (v - p) * f, t = p + (v - p) * f;
  double rgb[3];
  switch (static_cast<int>(hue) % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
  const std::size_t period = std::max<std::size_t>(4, img_size / 8);
  Tensor<float> img({img_size, img_size, 3});
  for (std::size_t y = 0; y < img_size; ++y)
    for (std::size_t x = 0; x < img_size; ++x) {
      const std::size_t along = label % 2 == 0 ? y : x;
      const double shade = (along / (period / 2)) % 2 == 0 ? 1.0 : 0.55;
      for (int c = 0; c < 3; ++c) {
        img[(y * img_size + x) * 3 + static_cast<std::size_t>(c)] = static_cast<float>(rgb[c] * shade);
      }
    }
  return img;
}

DatasetIndex write_synthetic_dataset(const std::filesystem::path& root, std::size_t per_class,
                                     std::size_t img_size, std::uint64_t seed, double noise) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw FileError(root, "cannot create directory: " + ec.message());
  const Rng base(seed);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const fs::path dir = root / ("c" + std::to_string(c));
    fs::create_directories(dir, ec);
    if (ec) throw FileError(dir, "cannot create directory: " + ec.message());
    const auto clean = synthetic_pattern(c, img_size);
    for (std::size_t k = 0; k < per_class; ++k) {
      Rng rng = base.derive(c * 1000003 + k);
      Tensor<float> img = clean.detach();
      for (auto& v : img.data()) v = std::clamp(static_cast<float>(v + noise * rng.normal()), 0.0f, 1.0f);
      char name[32];
      std::snprintf(name, sizeof name, "img_%05zu.ppm", k);
      save_ppm(dir / name, img);
    }
  }
  return index_dataset(root);
}

}  // namespace sldb
