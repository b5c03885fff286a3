#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "sldb/data/data.hpp"
#include "sldb/numerics/tensor.hpp"

namespace sldb {

/// Mean over rows of -sum_c y_c log softmax(logits)_c for logits [N, K] and
/// soft labels [N, K].
template <typename T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels);

struct Metrics {
  // confusion[truth][predicted]
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
  std::size_t total = 0;
  double accuracy = 0;
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  std::array<double, kNumClasses> f1{};
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;

  /// Human-readable table: accuracy, per-class rows, confusion matrix.
  std::string table() const;
};

/// Precision, recall and F1 are 0 for a class with an empty denominator.
Metrics compute_metrics(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels);

/// Row-wise argmax of [N, K].
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores);

}  // namespace sldb
