// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msfc/engine.hpp"
#include "msfc/protocol.hpp"

namespace msfc {

/// Read-only inputs shared by every run over one protocol.
struct PipelineInputs {
  const Dataset* data = nullptr;
  const FscilProtocol* protocol = nullptr;
  const BackboneParams* theta_star = nullptr;
  const MicroshapeBasis* basis = nullptr;
};

struct PrototypeSource {
  PrototypeMode mode = PrototypeMode::synthetic;
  std::size_t d = 32;
  std::uint64_t seed = 0;
  double kappa = 0.3;
  std::filesystem::path language_file;
};

/// Prototype table keyed by protocol class id. Feature mode returns an empty
/// table that the engine fills from embeddings as tasks arrive.
PrototypeTable protocol_prototypes(const FscilProtocol& protocol, const PrototypeSource& source);

struct RunResult {
  EvalReport report;
  ModelState state;
  /// One flag per incremental task: backbone and W bytes equal their
  /// post-base snapshot after that task.
  std::vector<bool> frozen_intact;
  std::vector<TrainReport> training;
  std::vector<std::string> warnings;
};

/// make_state + train_base on the protocol's base task.
ModelState train_base_state(const PipelineInputs& in, PrototypeTable prototypes, const EngineConfig& config,
                            const TrainHooks& hooks = {});

/// Accuracy over the base task's test set.
double base_accuracy(const ModelState& base, const PipelineInputs& in);

/// Main method: k-shot increments with exemplar replay, encoder frozen.
RunResult run_ours(const ModelState& base, const PipelineInputs& in, const TrainHooks& hooks = {});

/// Fine-tuning lower bound: no memory, every parameter trainable.
RunResult run_ft_baseline(const ModelState& base, const PipelineInputs& in, const TrainHooks& hooks = {});

/// Joint upper bound: at every task, retrain on the full training sets of
/// all classes seen so far (no exemplar memory).
RunResult run_joint_baseline(const ModelState& base, const PipelineInputs& in, const TrainConfig& joint,
                             const TrainHooks& hooks = {});

/// Two-task episodes: each draws fresh shots for the novel task, trains
/// one increment from `base` and scores base and novel test queries.
/// Returns the accuracy of every episode.
std::vector<double> run_dfsl_episodes(const ModelState& base, const PipelineInputs& in, std::size_t episodes);

}  // namespace msfc
