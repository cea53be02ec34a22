// SPDX-License-Identifier: Apache-2.0
#include "msfc/loss.hpp"

#include <algorithm>
#include <cmath>

#include "msfc/error.hpp"

namespace msfc {

namespace {

std::vector<std::size_t> label_columns(const Tensor2& scores, std::span<const int> labels,
                                       std::span<const int> class_set) {
  if (scores.cols() != class_set.size())
    throw ConfigError("score matrix has " + std::to_string(scores.cols()) + " columns for " +
                      std::to_string(class_set.size()) + " classes");
  if (scores.rows() != labels.size()) throw ConfigError("one label per score row required");
  if (scores.rows() == 0) throw ConfigError("empty score batch");
  std::vector<std::size_t> cols(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::find(class_set.begin(), class_set.end(), labels[i]);
    if (it == class_set.end())
      throw ProtocolError("label " + std::to_string(labels[i]) + " is not in the scored class set");
    cols[i] = static_cast<std::size_t>(it - class_set.begin());
  }
  return cols;
}

}  // namespace

LossResult bce_multi_class(const Tensor2& scores, std::span<const int> true_labels,
                           std::span<const int> class_set, double eps) {
  const auto cols = label_columns(scores, true_labels, class_set);
  const double norm = 1.0 / static_cast<double>(scores.rows() * scores.cols());
  LossResult res{0.0, Tensor2(scores.rows(), scores.cols())};
  double total = 0.0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      const double r = std::clamp(scores(i, j), eps, 1.0 - eps);
      if (j == cols[i]) {
        total += std::log(r);
        res.gradient(i, j) = -norm / r;
      } else {
        total += std::log(1.0 - r);
        res.gradient(i, j) = norm / (1.0 - r);
      }
    }
  }
  res.loss = -norm * total;
  return res;
}

LossResult mse_multi_class(const Tensor2& scores, std::span<const int> true_labels,
                           std::span<const int> class_set) {
  const auto cols = label_columns(scores, true_labels, class_set);
  const double norm = 1.0 / static_cast<double>(scores.rows() * scores.cols());
  LossResult res{0.0, Tensor2(scores.rows(), scores.cols())};
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      const double diff = scores(i, j) - (j == cols[i] ? 1.0 : 0.0);
      res.loss += norm * diff * diff;
      res.gradient(i, j) = 2.0 * norm * diff;
    }
  }
  return res;
}

LossResult softmax_cross_entropy(const Tensor2& logits, std::span<const int> label_columns) {
  if (logits.rows() != label_columns.size() || logits.rows() == 0)
    throw ConfigError("softmax_cross_entropy: one label per row required");
  const double norm = 1.0 / static_cast<double>(logits.rows());
  LossResult res{0.0, Tensor2(logits.rows(), logits.cols())};
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const int label = label_columns[i];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols())
      throw ProtocolError("softmax label out of range");
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    res.loss -= norm * (row[label] - log_z);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double p = std::exp(row[j] - log_z);
      res.gradient(i, j) = norm * (p - (static_cast<int>(j) == label ? 1.0 : 0.0));
    }
  }
  return res;
}

}  // namespace msfc
