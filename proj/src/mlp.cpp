// SPDX-License-Identifier: Apache-2.0
#include "msfc/mlp.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "msfc/error.hpp"

namespace msfc {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::none: return "none";
  }
  return "none";
}

std::size_t MlpParams::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
std::size_t MlpParams::output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ConfigError("mlp has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].bias.size() != layers[i].out_dim())
      throw ConfigError("mlp layer " + std::to_string(i) + " bias length mismatch");
    if (i + 1 < layers.size() && layers[i].out_dim() != layers[i + 1].in_dim())
      throw ConfigError("mlp layer " + std::to_string(i) + " output width " +
                        std::to_string(layers[i].out_dim()) + " does not chain into layer input " +
                        std::to_string(layers[i + 1].in_dim()));
  }
}

MlpParams make_mlp(std::span<const std::size_t> widths, std::span<const Activation> activations,
                   std::mt19937_64& rng, double leaky_slope) {
  if (widths.size() < 2) throw ConfigError("make_mlp needs at least input and output widths");
  if (activations.size() != widths.size() - 1)
    throw ConfigError("make_mlp needs one activation per layer");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    if (in == 0 || out == 0) throw ConfigError("make_mlp: zero layer width");
    DenseLayer layer;
    layer.weight = Tensor2(out, in);
    layer.bias.assign(out, 0.0);
    layer.activation = activations[i];
    layer.slope = leaky_slope;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : layer.weight.data()) w = dist(rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

double activate(Activation a, double x, double slope) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::leaky_relu: return x > 0.0 ? x : slope * x;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::none: return x;
  }
  return x;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor2& t) { return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }
MutMap view(Tensor2& t) { return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }

// y = act(x W^T + b)
Tensor2 dense_forward(const DenseLayer& layer, const Tensor2& x) {
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  if (x.cols() != in)
    throw ConfigError("dense layer expects input width " + std::to_string(in) + ", got " +
                      std::to_string(x.cols()));
  Tensor2 y(x.rows(), out);
  if (x.rows() == 0) return y;
  // Fixed-height row blocks (the tail zero-padded) send every row through the
  // same GEMM kernel path, so a row's result does not depend on its position.
  constexpr std::size_t kBlock = 48;
  const ConstMap w = view(layer.weight);
  RowMat xb, yb;
  for (std::size_t r = 0; r < x.rows(); r += kBlock) {
    const std::size_t m = std::min(kBlock, x.rows() - r);
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    if (m == kBlock) {
      MutMap(y.row(r).data(), ei(kBlock), ei(out)).noalias() =
          ConstMap(x.row(r).data(), ei(kBlock), ei(in)) * w.transpose();
    } else {
      xb = RowMat::Zero(ei(kBlock), ei(in));
      xb.topRows(ei(m)) = ConstMap(x.row(r).data(), ei(m), ei(in));
      yb.noalias() = xb * w.transpose();
      MutMap(y.row(r).data(), ei(m), ei(out)) = yb.topRows(ei(m));
    }
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* yr = y.row(r).data();
    for (std::size_t o = 0; o < out; ++o) yr[o] = activate(layer.activation, yr[o] + layer.bias[o], layer.slope);
  }
  return y;
}

}  // namespace

Tensor2 mlp_infer(const MlpParams& params, const Tensor2& input) {
  params.validate();
  Tensor2 h = input;
  for (const auto& layer : params.layers) h = dense_forward(layer, h);
  return h;
}

std::pair<Tensor2, MlpCache> mlp_forward(const MlpParams& params, const Tensor2& input) {
  params.validate();
  MlpCache cache;
  cache.owner = &params;
  cache.inputs.reserve(params.layers.size());
  cache.outputs.reserve(params.layers.size());
  const Tensor2* h = &input;
  for (const auto& layer : params.layers) {
    cache.inputs.push_back(*h);
    cache.outputs.push_back(dense_forward(layer, *h));
    h = &cache.outputs.back();
  }
  return {cache.outputs.back(), std::move(cache)};
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads g;
  for (const auto& l : params.layers) {
    g.weight.emplace_back(l.weight.rows(), l.weight.cols());
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

void MlpGrads::accumulate(const MlpGrads& other) {
  if (other.weight.size() != weight.size()) throw InternalError("gradient accumulate: layer count mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    auto dst = weight[i].data();
    auto src = other.weight[i].data();
    if (dst.size() != src.size()) throw InternalError("gradient accumulate: shape mismatch");
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    for (std::size_t k = 0; k < bias[i].size(); ++k) bias[i][k] += other.bias[i][k];
  }
}

bool MlpGrads::all_finite() const {
  for (const auto& w : weight)
    if (!w.all_finite()) return false;
  for (const auto& b : bias)
    for (double v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

MlpGrads mlp_backward(const MlpParams& params, const MlpCache& cache, const Tensor2& output_gradient,
                      bool need_input_gradient) {
  const std::size_t n_layers = params.layers.size();
  if (cache.owner != &params || cache.inputs.size() != n_layers || cache.outputs.size() != n_layers)
    throw InternalError("mlp_backward: cache does not belong to these parameters");
  for (std::size_t i = 0; i < n_layers; ++i) {
    if (cache.inputs[i].cols() != params.layers[i].in_dim() ||
        cache.outputs[i].cols() != params.layers[i].out_dim())
      throw InternalError("mlp_backward: stale cache (layer " + std::to_string(i) + " shape changed)");
  }
  const Tensor2& last = cache.outputs.back();
  if (output_gradient.rows() != last.rows() || output_gradient.cols() != last.cols())
    throw InternalError("mlp_backward: output gradient shape does not match cached output");

  MlpGrads grads = MlpGrads::zeros_like(params);
  Tensor2 delta = output_gradient;
  for (std::size_t li = n_layers; li-- > 0;) {
    const DenseLayer& layer = params.layers[li];
    const Tensor2& y = cache.outputs[li];
    const Tensor2& x = cache.inputs[li];
    const std::size_t out = layer.out_dim();
    const std::size_t in = layer.in_dim();
    // delta <- dL/d(pre-activation), derived from the post-activation output.
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      double* d = delta.row(r).data();
      const double* yr = y.row(r).data();
      switch (layer.activation) {
        case Activation::relu:
          for (std::size_t o = 0; o < out; ++o) d[o] = yr[o] > 0.0 ? d[o] : 0.0;
          break;
        case Activation::leaky_relu:
          for (std::size_t o = 0; o < out; ++o) d[o] = yr[o] > 0.0 ? d[o] : d[o] * layer.slope;
          break;
        case Activation::sigmoid:
          for (std::size_t o = 0; o < out; ++o) d[o] *= yr[o] * (1.0 - yr[o]);
          break;
        case Activation::none:
          break;
      }
    }
    Tensor2& gw = grads.weight[li];
    std::vector<double>& gb = grads.bias[li];
    if (delta.rows() > 0) view(gw).noalias() += view(delta).transpose() * view(x);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const double* d = delta.row(r).data();
      for (std::size_t o = 0; o < out; ++o) gb[o] += d[o];
    }
    if (li == 0 && !need_input_gradient) break;
    Tensor2 next(delta.rows(), in);
    if (delta.rows() > 0) view(next).noalias() = view(delta) * view(layer.weight);
    delta = std::move(next);
  }
  if (need_input_gradient) grads.input = std::move(delta);
  return grads;
}

}  // namespace msfc
