// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "msfc/mlp.hpp"
#include "msfc/pointcloud.hpp"
#include "msfc/tensor.hpp"

namespace msfc::testing {

inline Tensor2 random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor2 t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline PointCloud random_cloud(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({dist(rng), dist(rng), dist(rng)});
  return c;
}

/// Triple loop, no blocking.
inline Tensor2 naive_matmul(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  return out;
}

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// Largest relative error between analytic gradients and central
/// differences of `loss` over every weight and bias of `params`.
inline double fd_check_mlp(MlpParams& params, const MlpGrads& grads, const std::function<double()>& loss,
                           double h = 1e-6) {
  double worst = 0.0;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto w = params.layers[li].weight.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double keep = w[k];
      w[k] = keep + h;
      const double up = loss();
      w[k] = keep - h;
      const double down = loss();
      w[k] = keep;
      worst = std::max(worst, relative_error(grads.weight[li].data()[k], (up - down) / (2 * h)));
    }
    auto& b = params.layers[li].bias;
    for (std::size_t k = 0; k < b.size(); ++k) {
      const double keep = b[k];
      b[k] = keep + h;
      const double up = loss();
      b[k] = keep - h;
      const double down = loss();
      b[k] = keep;
      worst = std::max(worst, relative_error(grads.bias[li][k], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace msfc::testing
