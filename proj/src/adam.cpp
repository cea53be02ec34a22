// SPDX-License-Identifier: Apache-2.0
#include "msfc/adam.hpp"

#include <cmath>

#include "msfc/error.hpp"

namespace msfc {

OptimizerState make_optimizer(const MlpParams& params, const AdamConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(config.beta1 > 0.0 && config.beta1 < 1.0 && config.beta2 > 0.0 && config.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in (0,1)");
  if (!(config.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  OptimizerState s;
  s.config = config;
  for (const auto& l : params.layers) {
    s.first_weight.emplace_back(l.weight.rows(), l.weight.cols());
    s.second_weight.emplace_back(l.weight.rows(), l.weight.cols());
    s.first_bias.emplace_back(l.bias.size(), 0.0);
    s.second_bias.emplace_back(l.bias.size(), 0.0);
  }
  return s;
}

void optimizer_step(MlpParams& params, const MlpGrads& grads, OptimizerState& state) {
  if (params.frozen) throw FreezeViolation("optimizer step requested on frozen parameters");
  const std::size_t n = params.layers.size();
  if (grads.weight.size() != n || grads.bias.size() != n || state.first_weight.size() != n)
    throw ConfigError("gradient/optimizer layer count does not match parameters");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = params.layers[i];
    if (grads.weight[i].rows() != l.weight.rows() || grads.weight[i].cols() != l.weight.cols() ||
        grads.bias[i].size() != l.bias.size() ||
        state.first_weight[i].size() != l.weight.size() || state.first_bias[i].size() != l.bias.size())
      throw ConfigError("gradient shape mismatch at layer " + std::to_string(i));
  }
  if (!grads.all_finite()) throw NumericError("non-finite gradient");

  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  auto update = [&](double& p, double& m, double& v, double g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    p -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  };

  for (std::size_t i = 0; i < n; ++i) {
    auto& l = params.layers[i];
    auto w = l.weight.data();
    auto gw = grads.weight[i].data();
    auto mw = state.first_weight[i].data();
    auto vw = state.second_weight[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) update(w[k], mw[k], vw[k], gw[k]);
    for (std::size_t k = 0; k < l.bias.size(); ++k)
      update(l.bias[k], state.first_bias[i][k], state.second_bias[i][k], grads.bias[i][k]);
  }
}

}  // namespace msfc
