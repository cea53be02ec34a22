// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "msfc/tensor.hpp"

namespace msfc {

inline constexpr double kScoreEps = 1e-7;

struct LossResult {
  double loss = 0.0;
  Tensor2 gradient;  // dL/d(input), same shape as the scores/logits
};

/// Multi-class binary cross-entropy over relation scores. Column j of
/// `scores` holds r_ij for class `class_set[j]`; rows are samples. Scores
/// are clamped into [eps, 1 - eps] before the log:
///   L = -1/(|classes| |batch|) sum_j sum_i [y_ij log r_ij + (1 - y_ij) log(1 - r_ij)]
/// The gradient is taken at the clamped value.
LossResult bce_multi_class(const Tensor2& scores, std::span<const int> true_labels,
                           std::span<const int> class_set, double eps = kScoreEps);

/// Mean squared error against one-hot targets, same normalization as above.
LossResult mse_multi_class(const Tensor2& scores, std::span<const int> true_labels,
                           std::span<const int> class_set);

/// Softmax cross-entropy averaged over rows; labels are column indices.
LossResult softmax_cross_entropy(const Tensor2& logits, std::span<const int> label_columns);

}  // namespace msfc
