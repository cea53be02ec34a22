// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "msfc/tensor.hpp"

namespace msfc {

enum class Activation { relu, leaky_relu, sigmoid, none };

std::string to_string(Activation a);

/// One fully connected layer: y = act(x * W^T + b), W is out x in.
struct DenseLayer {
  Tensor2 weight;
  std::vector<double> bias;
  Activation activation = Activation::none;
  double slope = 0.01;  // leaky_relu negative slope

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;
  bool frozen = false;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  /// Throws ConfigError if consecutive layer widths do not chain.
  void validate() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
/// `widths` lists input width then each layer's output width.
MlpParams make_mlp(std::span<const std::size_t> widths, std::span<const Activation> activations,
                   std::mt19937_64& rng, double leaky_slope = 0.01);

/// Activation record of one forward pass; inputs[i] feeds layer i,
/// outputs[i] is its post-activation result.
struct MlpCache {
  const MlpParams* owner = nullptr;
  std::vector<Tensor2> inputs;
  std::vector<Tensor2> outputs;
};

struct MlpGrads {
  std::vector<Tensor2> weight;
  std::vector<std::vector<double>> bias;
  Tensor2 input;  // empty when not requested

  static MlpGrads zeros_like(const MlpParams& params);
  void accumulate(const MlpGrads& other);
  bool all_finite() const;
};

Tensor2 mlp_infer(const MlpParams& params, const Tensor2& input);
std::pair<Tensor2, MlpCache> mlp_forward(const MlpParams& params, const Tensor2& input);
MlpGrads mlp_backward(const MlpParams& params, const MlpCache& cache, const Tensor2& output_gradient,
                      bool need_input_gradient = true);

double activate(Activation a, double x, double slope);

}  // namespace msfc
