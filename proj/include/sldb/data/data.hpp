#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sldb/numerics/tensor.hpp"

namespace sldb {

inline constexpr std::size_t kNumClasses = 10;

/// Malformed image bytes; the message names the file and byte offset.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& path, std::size_t offset, const std::string& what);
  const std::string& path() const { return path_; }
  std::size_t offset() const { return offset_; }

 private:
  std::string path_;
  std::size_t offset_;
};

/// Filesystem failure naming the offending path.
class FileError : public std::runtime_error {
 public:
  FileError(const std::filesystem::path& path, const std::string& what);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// --- Images -------------------------------------------------------------

/// Binary P6 with maxval 255 -> [H, W, 3] in [0, 1].
Tensor<float> decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& path = "<memory>");
Tensor<float> load_ppm(const std::filesystem::path& path);
/// Reads only the header: {width, height}.
std::array<std::size_t, 2> ppm_size(const std::filesystem::path& path);

/// [H, W, 3] in [0, 1] -> P6 bytes (values clamped, rounded to nearest).
std::vector<std::uint8_t> encode_ppm(const Tensor<float>& image);
void save_ppm(const std::filesystem::path& path, const Tensor<float>& image);

/// Bilinear resampling of [H, W, C] with half-pixel centres and edge clamping.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t height, std::size_t width);

// --- Dataset index --------------------------------------------------------

/// Class names c0..c9 of the distracted-driver task.
const std::array<std::string_view, kNumClasses>& class_names();

struct ImageRecord {
  std::filesystem::path path;
  std::size_t label = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<ImageRecord> records;

  std::array<std::size_t, kNumClasses> class_counts() const;
  std::size_t size() const { return records.size(); }
};

/// Scans root/c0 .. root/c9 for .ppm files (sorted by name). Every class
/// directory must exist; headers are read to record image sizes.
DatasetIndex index_dataset(const std::filesystem::path& root);

struct DatasetSplit {
  DatasetIndex train;
  DatasetIndex test;
};

/// Per-class shuffled split with round(fraction * class count) training items;
/// fraction 1 leaves the test side empty.
DatasetSplit split_dataset(const DatasetIndex& index, double train_fraction, std::uint64_t seed);
std::size_t split_train_count(std::size_t class_count, double train_fraction);

/// "path<TAB>class<TAB>train|test" per line.
void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_split_manifest(const std::filesystem::path& path);

// --- Batching -------------------------------------------------------------

struct Normalization {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.5f, 0.5f, 0.5f};
};

/// (x - mean) / std per channel over the last axis.
void normalize_inplace(Tensor<float>& images, const Normalization& norm);

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
  std::size_t pixels = 0;
};
ChannelStats compute_channel_stats(const DatasetIndex& index, std::size_t img_size);

struct Batch {
  Tensor<float> images;               // [N, S, S, 3], normalized
  Tensor<float> labels;               // [N, 10], one-hot before mixing
  std::vector<std::size_t> indices;   // positions in the index
};

/// Index order for one epoch split into batches; the last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch,
                                                    bool shuffle = true);

/// Decodes, resizes to `img_size` and normalizes images of an index. Decoded
/// images are cached, so later epochs do not touch the disk.
class BatchLoader {
 public:
  BatchLoader(DatasetIndex index, std::size_t img_size, Normalization norm = {});

  const DatasetIndex& index() const { return index_; }
  std::size_t img_size() const { return img_size_; }
  /// Resized image in [0, 1], before normalization.
  const Tensor<float>& image(std::size_t i);
  Batch load(const std::vector<std::size_t>& members);

 private:
  DatasetIndex index_;
  std::size_t img_size_;
  Normalization norm_;
  std::vector<Tensor<float>> cache_;
};

// --- Synthetic data ---------------------------------------------------------

/// Writes root/c0..c9 with `per_class` images each: a class-specific colour
/// pattern plus Gaussian pixel noise of `noise` std.
DatasetIndex write_synthetic_dataset(const std::filesystem::path& root, std::size_t per_class,
                                     std::size_t img_size, std::uint64_t seed, double noise = 0.05);
/// The clean pattern of one class.
Tensor<float> synthetic_pattern(std::size_t label, std::size_t img_size);

}  // namespace sldb
