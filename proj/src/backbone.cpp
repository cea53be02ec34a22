// SPDX-License-Identifier: Apache-2.0
#include "msfc/backbone.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "msfc/adam.hpp"
#include "msfc/checkpoint.hpp"
#include "msfc/error.hpp"
#include "msfc/loss.hpp"
#include "msfc/seed.hpp"

namespace msfc {

std::vector<std::size_t> default_backbone_layers(std::size_t q) { return {64, 64, 128, q}; }

BackboneParams make_backbone(std::span<const std::size_t> layer_widths, std::uint64_t seed) {
  if (layer_widths.empty()) throw ConfigError("backbone needs at least one layer");
  std::vector<std::size_t> widths{3};
  widths.insert(widths.end(), layer_widths.begin(), layer_widths.end());
  std::vector<Activation> acts(layer_widths.size(), Activation::relu);
  std::mt19937_64 rng(seed);
  BackboneParams b;
  b.mlp = make_mlp(widths, acts, rng);
  return b;
}

PointBatch stack_clouds(std::span<const PointCloud* const> clouds) {
  PointBatch batch;
  std::size_t total = 0;
  batch.offsets.push_back(0);
  for (const PointCloud* c : clouds) {
    if (c->empty()) throw InputError("empty cloud in batch");
    total += c->size();
    batch.offsets.push_back(total);
  }
  batch.points = Tensor2(total, 3);
  std::size_t r = 0;
  for (const PointCloud* c : clouds)
    for (const auto& p : c->points) {
      batch.points(r, 0) = p[0];
      batch.points(r, 1) = p[1];
      batch.points(r, 2) = p[2];
      ++r;
    }
  return batch;
}

Tensor2 extract_point_features(const BackboneParams& backbone, const PointCloud& cloud) {
  if (backbone.mlp.input_dim() != 3) throw ConfigError("backbone must take 3-D points");
  const PointCloud* ptr = &cloud;
  return mlp_infer(backbone.mlp, stack_clouds({&ptr, 1}).points);
}

Tensor2 max_pool(const Tensor2& features, std::span<const std::size_t> offsets, std::vector<std::size_t>* argmax) {
  const std::size_t n = offsets.size() - 1;
  const std::size_t q = features.cols();
  Tensor2 pooled(n, q);
  if (argmax) argmax->assign(n * q, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (offsets[i + 1] <= offsets[i]) throw InputError("max_pool over an empty cloud");
    for (std::size_t c = 0; c < q; ++c) {
      std::size_t best = offsets[i];
      double v = features(best, c);
      for (std::size_t r = offsets[i] + 1; r < offsets[i + 1]; ++r) {
        if (features(r, c) > v) {
          v = features(r, c);
          best = r;
        }
      }
      pooled(i, c) = v;
      if (argmax) (*argmax)[i * q + c] = best;
    }
  }
  return pooled;
}

Tensor2 max_pool_backward(const Tensor2& pooled_gradient, std::span<const std::size_t> argmax,
                          std::size_t feature_rows) {
  const std::size_t q = pooled_gradient.cols();
  Tensor2 grad(feature_rows, q);
  for (std::size_t i = 0; i < pooled_gradient.rows(); ++i)
    for (std::size_t c = 0; c < q; ++c) grad(argmax[i * q + c], c) += pooled_gradient(i, c);
  return grad;
}

ClassifierHead make_classifier_head(std::size_t q, std::size_t hidden, std::vector<int> class_ids,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ClassifierHead h;
  const std::size_t widths[] = {q, hidden, class_ids.size()};
  const Activation acts[] = {Activation::relu, Activation::none};
  h.head = make_mlp(widths, acts, rng);
  h.class_ids = std::move(class_ids);
  return h;
}

Tensor2 classifier_logits(const BackboneParams& backbone, const ClassifierHead& head, const PointBatch& batch) {
  return mlp_infer(head.head, max_pool(mlp_infer(backbone.mlp, batch.points), batch.offsets));
}

double classifier_accuracy(const BackboneParams& backbone, const ClassifierHead& head,
                           std::span<const LabeledInstance> instances) {
  if (instances.empty()) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < instances.size(); start += kChunk) {
    const std::size_t end = std::min(instances.size(), start + kChunk);
    std::vector<const PointCloud*> clouds;
    for (std::size_t i = start; i < end; ++i) clouds.push_back(&instances[i].cloud);
    const Tensor2 logits = classifier_logits(backbone, head, stack_clouds(clouds));
    for (std::size_t i = start; i < end; ++i) {
      auto row = logits.row(i - start);
      const auto col = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (head.class_ids[col] == instances[i].class_id) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(instances.size());
}

PretrainResult pretrain_backbone(std::span<const LabeledInstance> base_train, const PretrainConfig& config) {
  std::vector<int> ids;
  for (const auto& inst : base_train) ids.push_back(inst.class_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw ProtocolError("backbone pretraining needs at least 2 base classes");
  if (config.batch_size == 0) throw ConfigError("pretrain batch size must be >= 1");
  std::map<int, int> column;
  for (std::size_t j = 0; j < ids.size(); ++j) column[ids[j]] = static_cast<int>(j);

  PretrainResult res;
  res.backbone = make_backbone(config.layers, derive_seed(config.seed, {1}));
  res.head = make_classifier_head(res.backbone.q(), config.head_hidden, ids, derive_seed(config.seed, {2}));

  if (config.epochs > 0) {
    const AdamConfig adam{config.learning_rate};
    OptimizerState opt_backbone = make_optimizer(res.backbone.mlp, adam);
    OptimizerState opt_head = make_optimizer(res.head.head, adam);
    std::vector<std::size_t> order(base_train.size());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 shuffle_rng(derive_seed(config.seed, {3, epoch}));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t end = std::min(order.size(), start + config.batch_size);
        std::vector<PointCloud> augmented;
        std::vector<const PointCloud*> clouds;
        std::vector<int> labels;
        augmented.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) {
          const LabeledInstance& inst = base_train[order[k]];
          if (config.augment) {
            AugmentConfig ac = config.augment_config;
            ac.seed = derive_seed(config.seed, {4, epoch, order[k]});
            augmented.push_back(augment_cloud(inst.cloud, ac));
            clouds.push_back(&augmented.back());
          } else {
            clouds.push_back(&inst.cloud);
          }
          labels.push_back(column.at(inst.class_id));
        }
        const PointBatch batch = stack_clouds(clouds);
        auto [features, bb_cache] = mlp_forward(res.backbone.mlp, batch.points);
        std::vector<std::size_t> argmax;
        const Tensor2 pooled = max_pool(features, batch.offsets, &argmax);
        auto [logits, head_cache] = mlp_forward(res.head.head, pooled);
        const LossResult loss = softmax_cross_entropy(logits, labels);
        loss_sum += loss.loss * static_cast<double>(end - start);
        MlpGrads head_grads = mlp_backward(res.head.head, head_cache, loss.gradient, true);
        const Tensor2 feature_grad = max_pool_backward(head_grads.input, argmax, features.rows());
        MlpGrads bb_grads = mlp_backward(res.backbone.mlp, bb_cache, feature_grad, false);
        optimizer_step(res.head.head, head_grads, opt_head);
        optimizer_step(res.backbone.mlp, bb_grads, opt_backbone);
      }
      res.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    }
  }
  res.backbone.role = BackboneRole::pretrain_star;
  res.backbone.mlp.frozen = true;
  res.train_accuracy = classifier_accuracy(res.backbone, res.head, base_train);
  return res;
}

std::uint64_t backbone_checksum(const BackboneParams& backbone) {
  return fnv1a64(serialize_mlp("backbone_star", backbone.mlp));
}

}  // namespace msfc
