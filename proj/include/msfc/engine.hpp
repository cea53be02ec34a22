// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msfc/backbone.hpp"
#include "msfc/checkpoint.hpp"
#include "msfc/microshape.hpp"
#include "msfc/pointcloud.hpp"
#include "msfc/prototypes.hpp"

namespace msfc {

enum class LossVariant { bce, mse };

std::string to_string(LossVariant v);
LossVariant parse_loss_variant(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 5e-5;
  std::size_t batch_size = 16;
};

struct EngineConfig {
  bool use_microshape = true;  // false: max-pooled backbone features feed W
  bool freeze = true;          // freeze backbone and W after the base task
  LossVariant loss = LossVariant::bce;
  std::size_t d = 32;
  std::vector<std::size_t> relation_hidden{600, 300};
  double leaky_slope = 0.01;
  TrainConfig base{50, 1e-4, 64};
  TrainConfig increment{20, 5e-5, 16};
  bool augment_base = true;
  bool augment_increment = true;
  AugmentConfig augment_config;
  std::uint64_t seed = 0;
  std::uint64_t exemplar_seed = 0;
};

struct ExemplarMemory {
  std::map<int, LabeledInstance> entries;
  std::uint64_t selection_seed = 0;

  std::size_t size() const { return entries.size(); }
};

/// Everything the pipeline trains or consults: backbone theta (initialized
/// from theta*), projection W, relation module R, the microshape basis,
/// prototypes, the seen class set and the exemplar memory.
struct ModelState {
  EngineConfig config;
  BackboneParams backbone;
  MlpParams projection;
  MlpParams relation;
  MicroshapeBasis basis;
  PrototypeTable prototypes;
  std::vector<int> seen_classes;  // ascending
  std::size_t task_index = 0;     // number of completed tasks
  ExemplarMemory memory;
  bool memory_enabled = true;
};

ModelState make_state(const BackboneParams& theta_star, MicroshapeBasis basis, PrototypeTable prototypes,
                      const EngineConfig& config);

/// Pooled descriptor fed to W: the microshape feature, or the max-pooled
/// backbone feature when microshapes are disabled.
std::vector<double> pooled_descriptor(const ModelState& state, const PointCloud& cloud);
/// Embedding z = ReLU(W e + b).
std::vector<double> encode(const ModelState& state, const PointCloud& cloud);
/// One row of z per cloud.
Tensor2 encode_batch(const ModelState& state, std::span<const PointCloud* const> clouds);

/// Relation logits R(z_i (+) s_j) for each row of z against `classes`.
Tensor2 relation_logits(const ModelState& state, const Tensor2& z, std::span<const int> classes);

struct RelationScores {
  std::vector<int> class_ids;
  std::vector<double> logits;
  std::vector<double> scores;  // sigmoid(logits) clamped to [eps, 1 - eps]
};

RelationScores relation_scores(const ModelState& state, const PointCloud& cloud);

/// Index of the best score; ties go to the lowest class id.
int argmax_lowest_id(std::span<const double> scores, std::span<const int> class_ids);

/// Argmax of the unclamped sigmoid scores.
int predict(const ModelState& state, const PointCloud& cloud);
std::vector<int> predict_batch(const ModelState& state, std::span<const PointCloud* const> clouds);

struct BatchGradients {
  double loss = 0.0;
  Tensor2 scores;  // sigmoid scores, rows = clouds, cols = classes
  MlpGrads relation;
  MlpGrads projection;  // empty unless requested
  MlpGrads backbone;    // empty unless requested
};

/// Loss (multi-class BCE or MSE) of one batch and its gradients. `z` given: the
/// encoder is skipped and only relation gradients are produced.
BatchGradients batch_gradients(const ModelState& state, std::span<const PointCloud* const> clouds,
                               std::span<const int> labels, std::span<const int> classes, bool backbone_grads,
                               bool projection_grads);
BatchGradients batch_gradients_from_z(const ModelState& state, const Tensor2& z, std::span<const int> labels,
                                      std::span<const int> classes);

struct BatchRecord {
  const Tensor2& scores;
  std::span<const int> labels;
  std::span<const int> classes;
  double loss;
  std::size_t step;
};

struct TrainHooks {
  std::function<void(const BatchRecord&)> on_batch;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct FitOptions {
  bool train_backbone = false;
  bool train_projection = false;
  bool augment = false;
  std::uint64_t seed = 0;
  /// Fixed batch order (no shuffling) across epochs.
  bool fixed_order = false;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

/// Minimizes the relation loss of `samples` scored against `classes`. The
/// relation module always trains; backbone and W only when requested.
TrainReport fit(ModelState& state, std::span<const LabeledInstance* const> samples, std::span<const int> classes,
                const TrainConfig& config, const FitOptions& options, const TrainHooks& hooks = {});

/// Base task: trains theta, W and R on the full base data, then freezes
/// theta and W (when configured) and stores one random exemplar per class.
TrainReport train_base(ModelState& state, std::span<const LabeledInstance> base_train, const TrainHooks& hooks = {});

/// Incremental task: trains R on the k-shot samples plus the exemplar
/// memory, scoring against every class seen so far.
TrainReport train_increment(ModelState& state, std::span<const LabeledInstance> task_data,
                            const TrainHooks& hooks = {});

/// Adds prototypes for `classes` computed as the mean embedding of their
/// instances (feature-prototype mode).
void add_feature_prototypes(ModelState& state, std::span<const LabeledInstance> instances);

/// Serialized float32 bytes of backbone theta and W.
std::string frozen_part_bytes(const ModelState& state);

void store_model(Checkpoint& ckpt, const ModelState& state);
std::string model_sidecar(const ModelState& state);

}  // namespace msfc
