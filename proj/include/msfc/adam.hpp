// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "msfc/mlp.hpp"

namespace msfc {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::vector<Tensor2> first_weight, second_weight;
  std::vector<std::vector<double>> first_bias, second_bias;
  std::uint64_t step_count = 0;
};

OptimizerState make_optimizer(const MlpParams& params, const AdamConfig& config);

/// One bias-corrected Adam update. Frozen parameters and non-finite
/// gradients are rejected before anything is mutated.
void optimizer_step(MlpParams& params, const MlpGrads& grads, OptimizerState& state);

}  // namespace msfc
