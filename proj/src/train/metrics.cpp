#include "sldb/train/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "sldb/numerics/tape.hpp"

namespace sldb {

template <typename T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.rank() != 2 || logits.shape() != labels.shape()) {
    throw DimensionError("soft_cross_entropy: logits " + shape_str(logits.shape()) + " vs labels " +
                         shape_str(labels.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw DimensionError("soft_cross_entropy: empty batch");
  std::vector<T> probs(n * k);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.ptr() + i * k;
    const double mx = static_cast<double>(*std::max_element(z, z + k));
    double norm = 0;
    for (std::size_t c = 0; c < k; ++c) norm += std::exp(static_cast<double>(z[c]) - mx);
    const double log_norm = mx + std::log(norm);
    for (std::size_t c = 0; c < k; ++c) {
      const double logp = static_cast<double>(z[c]) - log_norm;
      probs[i * k + c] = static_cast<T>(std::exp(logp));
      total -= static_cast<double>(labels[i * k + c]) * logp;
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  if (autograd::needs_grad(logits, labels)) {
    auto zn = logits.node(), yn = labels.node(), on = out.node();
    autograd::record(out, [zn, yn, on, probs = std::move(probs), n, k] {
      if (on->grad.empty()) return;
      const T g = on->grad[0] / static_cast<T>(n);
      if (zn->requires_grad) {
        auto& gz = autograd::grad_buffer(*zn);
        for (std::size_t i = 0; i < n; ++i) {
          T mass = 0;
          for (std::size_t c = 0; c < k; ++c) mass += yn->data[i * k + c];
          for (std::size_t c = 0; c < k; ++c)
            gz[i * k + c] += g * (mass * probs[i * k + c] - yn->data[i * k + c]);
        }
      }
      if (yn->requires_grad) {
        auto& gy = autograd::grad_buffer(*yn);
        for (std::size_t i = 0; i < n * k; ++i) gy[i] -= g * std::log(probs[i]);
      }
    });
  }
  return out;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows: expected [N, K], got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = scores.ptr() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

Metrics compute_metrics(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("compute_metrics: length mismatch");
  Metrics m;
  m.total = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kNumClasses || predictions[i] >= kNumClasses)
      throw std::out_of_range("compute_metrics: class index out of range");
    ++m.confusion[labels[i]][predictions[i]];
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    correct += m.confusion[c][c];
    std::size_t predicted = 0, actual = 0;
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      predicted += m.confusion[o][c];
      actual += m.confusion[c][o];
    }
    const double tp = static_cast<double>(m.confusion[c][c]);
    m.precision[c] = predicted ? tp / static_cast<double>(predicted) : 0.0;
    m.recall[c] = actual ? tp / static_cast<double>(actual) : 0.0;
    const double pr = m.precision[c] + m.recall[c];
    m.f1[c] = pr > 0 ? 2 * m.precision[c] * m.recall[c] / pr : 0.0;
    m.macro_precision += m.precision[c];
    m.macro_recall += m.recall[c];
    m.macro_f1 += m.f1[c];
  }
  m.accuracy = m.total ? static_cast<double>(correct) / static_cast<double>(m.total) : 0.0;
  m.macro_precision /= kNumClasses;
  m.macro_recall /= kNumClasses;
  m.macro_f1 /= kNumClasses;
  return m;
}

std::string Metrics::table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "accuracy %.4f\n", accuracy);
  out += line;
  out += "class\tprecision\trecall\tf1\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::snprintf(line, sizeof line, "c%zu\t%.4f\t%.4f\t%.4f\n", c, precision[c], recall[c], f1[c]);
    out += line;
  }
  std::snprintf(line, sizeof line, "macro\t%.4f\t%.4f\t%.4f\n", macro_precision, macro_recall, macro_f1);
  out += line;
  out += "confusion";
  for (std::size_t c = 0; c < kNumClasses; ++c) out += "\tc" + std::to_string(c);
  out += '\n';
  for (std::size_t r = 0; r < kNumClasses; ++r) {
    out += "c" + std::to_string(r);
    for (std::size_t c = 0; c < kNumClasses; ++c) out += '\t' + std::to_string(confusion[r][c]);
    out += '\n';
  }
  return out;
}

template Tensor<float> soft_cross_entropy(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> soft_cross_entropy(const Tensor<double>&, const Tensor<double>&);
template std::vector<std::size_t> argmax_rows(const Tensor<float>&);
template std::vector<std::size_t> argmax_rows(const Tensor<double>&);

}  // namespace sldb
