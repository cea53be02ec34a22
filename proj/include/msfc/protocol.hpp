// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msfc/generator.hpp"
#include "msfc/pointcloud.hpp"

namespace msfc {

struct ModelState;

enum class ProtocolMode { within, cross, dfsl, single };

std::string to_string(ProtocolMode m);
ProtocolMode parse_protocol_mode(const std::string& s);

struct ProtocolClass {
  std::string name;
  Domain domain = Domain::synthetic;

  friend bool operator==(const ProtocolClass&, const ProtocolClass&) = default;
};

/// Task 0 is the base task. Class ids are indices into `classes`, assigned
/// in task order.
struct FscilProtocol {
  ProtocolMode mode = ProtocolMode::within;
  std::vector<ProtocolClass> classes;
  std::vector<std::vector<int>> tasks;
  std::size_t shots = 5;
  std::size_t exemplars = 1;
  std::uint64_t shot_seed = 0;
  std::uint64_t exemplar_seed = 0;
  std::size_t episodes = 0;  // dfsl only

  /// Throws ProtocolError on overlapping tasks or unknown ids.
  void validate() const;
  std::size_t task_count() const { return tasks.size(); }
  /// Ids of every class in tasks [0, through_task], ascending.
  std::vector<int> seen_through(std::size_t through_task) const;
  std::optional<int> find(const std::string& name, Domain domain) const;

  friend bool operator==(const FscilProtocol&, const FscilProtocol&) = default;
};

/// Classes of `domain` sorted by descending training frequency (ties by
/// name). The first `base_count` classes (default half, rounded down) form
/// the base task; the rest fill n_tasks - 1 equal novel tasks in sorted
/// order, the last one taking the remainder.
FscilProtocol build_within_protocol(std::span<const ManifestEntry> manifest, std::size_t n_tasks, std::uint64_t seed,
                                    Domain domain = Domain::synthetic,
                                    std::optional<std::size_t> base_count = std::nullopt);

/// Synthetic classes form the base task (names also present in the real
/// manifest are dropped from it); real classes fill tasks of novel_per_task.
FscilProtocol build_cross_protocol(std::span<const ManifestEntry> synthetic_manifest,
                                   std::span<const ManifestEntry> real_manifest, std::size_t novel_per_task,
                                   std::uint64_t seed);

/// Base task plus one novel task holding every real class.
FscilProtocol make_dfsl_protocol(std::span<const ManifestEntry> base_manifest,
                                 std::span<const ManifestEntry> novel_manifest, std::size_t k, std::size_t episodes,
                                 std::uint64_t seed);

/// One task holding every class of `domain`.
FscilProtocol make_single_protocol(std::span<const ManifestEntry> manifest, Domain domain, std::uint64_t seed);

/// Validation split: the first `base_fraction` of the base classes stay
/// base, the rest become novel tasks of `novel_per_task`.
FscilProtocol make_validation_protocol(const FscilProtocol& protocol, double base_fraction = 0.6,
                                       std::size_t novel_per_task = 5);

/// Instances of `split` belonging to `task`, relabeled to protocol ids.
std::vector<LabeledInstance> task_instances(const FscilProtocol& protocol, const Dataset& data, std::size_t task,
                                            Split split);

/// k seeded-random training instances per class of an incremental task.
/// A class with fewer than k instances contributes all of them and adds a
/// line to `warnings`.
std::vector<LabeledInstance> sample_shots(const FscilProtocol& protocol, const Dataset& data, std::size_t task,
                                          std::vector<std::string>* warnings = nullptr,
                                          std::optional<std::uint64_t> seed_override = std::nullopt);

/// Test instances of every class seen through `through_task`.
std::vector<LabeledInstance> evaluation_pool(const FscilProtocol& protocol, const Dataset& data,
                                             std::size_t through_task);

using Predictor = std::function<std::vector<int>(std::span<const PointCloud* const>)>;

double evaluate(const Predictor& predictor, const Dataset& data, const FscilProtocol& protocol,
                std::size_t through_task);
double evaluate(const ModelState& state, const Dataset& data, const FscilProtocol& protocol, std::size_t through_task);
double accuracy(const Predictor& predictor, std::span<const LabeledInstance> pool);

/// |last - first| / first * 100.
double delta_metric(std::span<const double> accuracies);

struct EvalRow {
  std::size_t task_index = 0;  // 1-based
  std::size_t classes_seen = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> per_task;
  double delta = 0.0;

  std::vector<double> accuracies() const;
  /// Recomputes delta from the rows (0 for a single row).
  void finalize();
};

std::string format_report_csv(const EvalReport& report);
EvalReport parse_report_csv(const std::string& text);
std::string format_report_table(const EvalReport& report, const std::string& title = "");

std::string format_protocol(const FscilProtocol& protocol);
FscilProtocol parse_protocol(const std::string& text);
void write_protocol(const FscilProtocol& protocol, const std::filesystem::path& path);
FscilProtocol read_protocol(const std::filesystem::path& path);

}  // namespace msfc
