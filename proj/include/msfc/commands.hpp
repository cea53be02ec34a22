// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "msfc/config.hpp"
#include "msfc/engine.hpp"
#include "msfc/pipeline.hpp"
#include "msfc/generator.hpp"
#include "msfc/protocol.hpp"

namespace msfc {

/// Families from the preset names with the configured corruption profile.
std::vector<ShapeFamily> configured_families(const RunConfig& cfg);
EngineConfig engine_config(const RunConfig& cfg);
PretrainConfig pretrain_config(const RunConfig& cfg);
FscilProtocol build_protocol(const RunConfig& cfg, std::span<const ManifestEntry> manifest);

PrototypeSource prototype_source(const RunConfig& cfg);

/// Everything the run and baseline commands load from disk.
struct PreparedInputs {
  Dataset data;
  FscilProtocol protocol;
  BackboneParams theta_star;
  MicroshapeBasis basis;
  PrototypeTable prototypes;

  PipelineInputs view() const { return {&data, &protocol, &theta_star, &basis}; }
};

/// generate, protocol, pretrain and basis without touching the disk. Weights
/// pass through the float32 checkpoint format, so results match the
/// file-based stages.
PreparedInputs prepare_inputs(const RunConfig& cfg);

/// Output directory of run/baseline commands.
std::filesystem::path run_directory(const RunConfig& cfg, const std::string& command);

void cmd_generate(const RunConfig& cfg, std::ostream& log);
void cmd_protocol(const RunConfig& cfg, std::ostream& log);
void cmd_pretrain(const RunConfig& cfg, std::ostream& log);
void cmd_basis(const RunConfig& cfg, std::ostream& log);
EvalReport cmd_run(const RunConfig& cfg, std::ostream& log);
/// kind is "ft" or "joint".
EvalReport cmd_baseline(const RunConfig& cfg, const std::string& kind, std::ostream& log);
/// Side-by-side table of the report.csv files in `run_dirs`.
std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace msfc
