#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "sldb/data/data.hpp"
#include "sldb/numerics/rng.hpp"

namespace sldb {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sldb_data_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> bytes_of(const std::string& header, std::vector<std::uint8_t> pixels) {
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

TEST(Ppm, WhitePixel) {
  auto img = decode_ppm(bytes_of("P6\n1 1\n255\n", {255, 255, 255}));
  ASSERT_EQ(img.shape(), (Shape{1, 1, 3}));
  for (float v : img.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Ppm, RedThenBlue) {
  auto img = decode_ppm(bytes_of("P6 2 1 255\n", {255, 0, 0, 0, 0, 255}));
  ASSERT_EQ(img.shape(), (Shape{1, 2, 3}));
  const float expected[6] = {1, 0, 0, 0, 0, 1};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(img[static_cast<std::size_t>(i)], expected[i]);
}

TEST(Ppm, CommentsInHeader) {
  auto img = decode_ppm(bytes_of("P6\n# made by hand\n1 1\n# max\n255\n", {0, 128, 255}));
  EXPECT_FLOAT_EQ(img[1], 128.0f / 255.0f);
}

TEST(Ppm, ErrorsNamePathAndOffset) {
  try {
    decode_ppm(bytes_of("P3\n1 1\n255\n", {}), "a.ppm");
    FAIL() << "ascii magic accepted";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.path(), "a.ppm");
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("a.ppm"), std::string::npos);
  }
  try {
    decode_ppm(bytes_of("P6\n2 2\n255\n", {1, 2, 3}), "short.ppm");
    FAIL() << "short file accepted";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.offset(), 14u);
  }
  EXPECT_THROW(decode_ppm(bytes_of("P6\n1 1\n65535\n", {0, 0, 0, 0, 0, 0})), DecodeError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n1", {})), DecodeError);
  EXPECT_THROW(decode_ppm({}), DecodeError);
}

TEST(Ppm, RoundTripIsByteIdentical) {
  const auto dir = scratch("ppm");
  Rng rng(1);
  std::vector<std::uint8_t> pixels(5 * 3 * 3);
  for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  const auto original = bytes_of("P6\n5 3\n255\n", pixels);
  {
    std::ofstream out(dir / "x.ppm", std::ios::binary);
    out.write(reinterpret_cast<const char*>(original.data()), static_cast<std::streamsize>(original.size()));
  }
  auto img = load_ppm(dir / "x.ppm");
  EXPECT_EQ(encode_ppm(img), original);
  save_ppm(dir / "y.ppm", img);
  EXPECT_TRUE(bitwise_equal(load_ppm(dir / "y.ppm"), img));
  EXPECT_THROW(load_ppm(dir / "missing.ppm"), FileError);
}

TEST(Resize, HalfPixelRow) {
  Tensor<float> row({1, 2, 1}, std::vector<float>{0.0f, 1.0f});
  auto out = resize_bilinear(row, 1, 4);
  const float expected[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(out[static_cast<std::size_t>(i)], expected[i]);
}

TEST(Resize, IdentityAndConstant) {
  Rng rng(2);
  Tensor<float> img({5, 7, 3});
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  EXPECT_TRUE(bitwise_equal(resize_bilinear(img, 5, 7), img));
  auto c = resize_bilinear(Tensor<float>({5, 7, 3}, 0.3f), 11, 2);
  for (float v : c.data()) EXPECT_FLOAT_EQ(v, 0.3f);
  EXPECT_THROW(resize_bilinear(img, 0, 3), DimensionError);
}

TEST(ClassNames, TenClasses) {
  EXPECT_EQ(class_names().size(), 10u);
  EXPECT_EQ(class_names()[0], "Normal driving");
  EXPECT_EQ(class_names()[9], "Talking to passenger");
}

DatasetIndex fake_index(const std::array<std::size_t, kNumClasses>& counts) {
  DatasetIndex index;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    for (std::size_t k = 0; k < counts[c]; ++k) {
      index.records.push_back({"c" + std::to_string(c) + "/" + std::to_string(k) + ".ppm", c, 1, 1});
    }
  return index;
}

TEST(Split, TableOneFirstRow) {
  EXPECT_EQ(split_train_count(2489, 0.8), 1991u);
  auto split = split_dataset(fake_index({2489, 0, 0, 0, 0, 0, 0, 0, 0, 0}), 0.8, 7);
  EXPECT_EQ(split.train.size(), 1991u);
  EXPECT_EQ(split.test.size(), 498u);
}

TEST(Split, TableOneAllClasses) {
  const std::array<std::size_t, kNumClasses> total{2489, 2267, 2317, 2346, 2326, 2312, 2325, 2002, 1911, 2129};
  const std::array<std::size_t, kNumClasses> train{1991, 1814, 1854, 1877, 1861, 1850, 1860, 1602, 1529, 1703};
  auto split = split_dataset(fake_index(total), 0.8, 3);
  EXPECT_EQ(split.train.class_counts(), train);
  std::array<std::size_t, kNumClasses> test{};
  for (std::size_t c = 0; c < kNumClasses; ++c) test[c] = total[c] - train[c];
  EXPECT_EQ(split.test.class_counts(), test);
}

TEST(Split, DisjointExhaustiveDeterministic) {
  auto index = fake_index({30, 25, 20, 15, 10, 9, 8, 7, 6, 5});
  auto a = split_dataset(index, 0.7, 11), b = split_dataset(index, 0.7, 11);
  auto c = split_dataset(index, 0.7, 12);
  std::set<std::string> train, test;
  for (const auto& r : a.train.records) train.insert(r.path.string());
  for (const auto& r : a.test.records) test.insert(r.path.string());
  EXPECT_EQ(train.size() + test.size(), index.size());
  for (const auto& p : train) EXPECT_EQ(test.count(p), 0u);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train.records[i].path, b.train.records[i].path);
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) differs |= a.train.records[i].path != c.train.records[i].path;
  EXPECT_TRUE(differs);
}

TEST(Split, FractionNearOne) {
  auto split = split_dataset(fake_index({3, 3, 3, 3, 3, 3, 3, 3, 3, 3}), 0.999, 1);
  EXPECT_EQ(split.train.size() + split.test.size(), 30u);
  auto all = split_dataset(fake_index({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}), 1.0, 1);
  EXPECT_EQ(all.train.size(), 10u);
  EXPECT_EQ(all.test.size(), 0u);
  EXPECT_THROW(split_dataset(fake_index({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}), 1.5, 1), std::invalid_argument);
  EXPECT_THROW(split_dataset(fake_index({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}), 0.0, 1), std::invalid_argument);
}

TEST(Split, ManifestRoundTrip) {
  const auto dir = scratch("manifest");
  auto split = split_dataset(fake_index({4, 3, 2, 1, 0, 0, 0, 0, 0, 5}), 0.5, 1);
  write_split_manifest(dir / "split.tsv", split);
  auto back = read_split_manifest(dir / "split.tsv");
  ASSERT_EQ(back.train.size(), split.train.size());
  ASSERT_EQ(back.test.size(), split.test.size());
  for (std::size_t i = 0; i < back.test.size(); ++i) {
    EXPECT_EQ(back.test.records[i].path, split.test.records[i].path);
    EXPECT_EQ(back.test.records[i].label, split.test.records[i].label);
  }
}

TEST(Batches, SizesAndPartition) {
  auto batches = epoch_batches(10, 3, 5, 0);
  ASSERT_EQ(batches.size(), 4u);
  EXPECT_EQ(batches[0].size(), 3u);
  EXPECT_EQ(batches[3].size(), 1u);
  for (std::uint64_t epoch = 0; epoch < 5; ++epoch) {
    std::multiset<std::size_t> seen;
    for (const auto& b : epoch_batches(37, 4, 5, epoch)) seen.insert(b.begin(), b.end());
    ASSERT_EQ(seen.size(), 37u);
    for (std::size_t i = 0; i < 37; ++i) EXPECT_EQ(seen.count(i), 1u);
  }
  EXPECT_NE(epoch_batches(37, 4, 5, 0), epoch_batches(37, 4, 5, 1));
  EXPECT_EQ(epoch_batches(37, 4, 5, 2), epoch_batches(37, 4, 5, 2));
}

TEST(Batches, Normalization) {
  Tensor<float> px({1, 1, 2, 3}, std::vector<float>{1, 1, 1, 0, 0, 0});
  normalize_inplace(px, Normalization{});
  for (int i = 0; i < 3; ++i) EXPECT_EQ(px[static_cast<std::size_t>(i)], 1.0f);
  for (int i = 3; i < 6; ++i) EXPECT_EQ(px[static_cast<std::size_t>(i)], -1.0f);
}

TEST(Dataset, SyntheticIndexAndLoader) {
  const auto dir = scratch("synthetic");
  auto index = write_synthetic_dataset(dir, 3, 16, 1);
  ASSERT_EQ(index.size(), 30u);
  for (auto n : index.class_counts()) EXPECT_EQ(n, 3u);
  EXPECT_EQ(index.records[0].width, 16u);
  BatchLoader loader(index, 8);
  auto batch = loader.load({0, 29});
  EXPECT_EQ(batch.images.shape(), (Shape{2, 8, 8, 3}));
  EXPECT_EQ(batch.labels[0], 1.0f);
  EXPECT_EQ(batch.labels[kNumClasses + 9], 1.0f);
  for (float v : batch.images.data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  auto stats = compute_channel_stats(index, 0);
  EXPECT_EQ(stats.pixels, 30u * 256u);
}

TEST(Dataset, MissingClassDirectory) {
  const auto dir = scratch("missing");
  for (int c = 0; c < 9; ++c) fs::create_directories(dir / ("c" + std::to_string(c)));
  EXPECT_THROW(index_dataset(dir), FileError);
  EXPECT_THROW(index_dataset(dir / "nope"), FileError);
}

TEST(Dataset, CorruptFileReportsPath) {
  const auto dir = scratch("corrupt");
  auto index = write_synthetic_dataset(dir, 1, 8, 1);
  {
    std::ofstream out(index.records[4].path, std::ios::binary | std::ios::trunc);
    out << "P6\n8 8\n255\n";
  }
  BatchLoader loader(index, 8);
  try {
    loader.load({4});
    FAIL() << "truncated file accepted";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.path(), index.records[4].path.string());
  }
}

}  // namespace
}  // namespace sldb
