// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msfc/mlp.hpp"
#include "msfc/pointcloud.hpp"

namespace msfc {

enum class BackboneRole { pretrain_star, pipeline };

/// Per-point feature extractor: one MLP applied with shared weights to
/// every point (x, y, z) -> R^q.
struct BackboneParams {
  MlpParams mlp;
  BackboneRole role = BackboneRole::pipeline;

  std::size_t q() const { return mlp.output_dim(); }
  bool frozen() const { return mlp.frozen; }
};

/// Hidden/output widths 64, 64, 128, q.
std::vector<std::size_t> default_backbone_layers(std::size_t q);

BackboneParams make_backbone(std::span<const std::size_t> layer_widths, std::uint64_t seed);

/// Clouds stacked row-wise; cloud i owns rows [offsets[i], offsets[i+1]).
struct PointBatch {
  Tensor2 points;
  std::vector<std::size_t> offsets;

  std::size_t clouds() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

PointBatch stack_clouds(std::span<const PointCloud* const> clouds);

/// l x q matrix whose row i is the feature of point i.
Tensor2 extract_point_features(const BackboneParams& backbone, const PointCloud& cloud);

/// Max over each cloud's rows. `argmax` (optional) receives, per cloud and
/// column, the winning row index; used by max_pool_backward.
Tensor2 max_pool(const Tensor2& features, std::span<const std::size_t> offsets,
                 std::vector<std::size_t>* argmax = nullptr);
Tensor2 max_pool_backward(const Tensor2& pooled_gradient, std::span<const std::size_t> argmax,
                          std::size_t feature_rows);

/// Pretraining head on top of the max-pooled global feature; discarded
/// once the backbone is pretrained.
struct ClassifierHead {
  MlpParams head;
  std::vector<int> class_ids;  // column j of the logits scores class_ids[j]
};

ClassifierHead make_classifier_head(std::size_t q, std::size_t hidden, std::vector<int> class_ids,
                                    std::uint64_t seed);

struct PretrainConfig {
  std::vector<std::size_t> layers = default_backbone_layers(64);
  std::size_t head_hidden = 64;
  std::size_t epochs = 50;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augment_config;
};

struct PretrainResult {
  BackboneParams backbone;  // role pretrain_star, frozen
  ClassifierHead head;
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
};

/// Trains backbone + head with softmax cross-entropy on the base classes
/// and returns the frozen backbone.
PretrainResult pretrain_backbone(std::span<const LabeledInstance> base_train, const PretrainConfig& config);

/// Logits (clouds x classes) of backbone + head.
Tensor2 classifier_logits(const BackboneParams& backbone, const ClassifierHead& head, const PointBatch& batch);

double classifier_accuracy(const BackboneParams& backbone, const ClassifierHead& head,
                           std::span<const LabeledInstance> instances);

/// FNV-1a of the backbone's serialized float32 bytes.
std::uint64_t backbone_checksum(const BackboneParams& backbone);

}  // namespace msfc
