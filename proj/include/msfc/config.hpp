// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace msfc {

/// Every tunable of the command-line pipeline. Keys are listed by
/// config_keys(); values round-trip through format_config / parse_config.
struct RunConfig {
  // paths
  std::string data_dir = "data";
  std::string work_dir = "work";
  std::string run_dir;  // empty: <work_dir>/<command>
  std::string prototype_file;

  // generator
  std::vector<std::string> families{"ball", "cube", "can",     "cone",  "donut", "egg",  "pill", "pyramid", "table",
                                    "snowman", "plank", "pipe", "disc", "spike", "ring", "lens", "stool", "tower"};
  std::size_t train_count = 20;
  std::size_t test_count = 10;
  std::size_t points = 256;
  double jitter = 0.02;
  double occlusion = 0.25;
  double clutter = 0.10;
  double density_bias = 0.5;

  // protocol
  std::string protocol_mode = "cross";
  std::vector<std::string> base_classes;   // cross/dfsl: synthetic-domain classes
  std::vector<std::string> novel_classes;  // cross/dfsl: real-domain classes
  std::string protocol_domain = "synthetic";
  std::size_t n_tasks = 5;
  std::size_t base_count = 0;  // 0: half of the classes
  std::size_t novel_per_task = 2;
  std::size_t shots = 5;
  std::size_t exemplars = 1;
  std::size_t episodes = 20;
  bool validation = false;

  // backbone and microshapes
  std::size_t q = 64;
  std::vector<std::size_t> backbone_hidden{64, 64, 128};
  std::size_t m = 64;
  std::size_t feature_cap = 500000;
  std::size_t kmeans_iters = 100;
  double energy_threshold = 0.95;
  std::string energy_mode = "squared";
  bool use_svd = true;

  // engine
  std::size_t d = 32;
  std::vector<std::size_t> relation_hidden{600, 300};
  double lr_pretrain = 1e-4;
  std::size_t epochs_pretrain = 50;
  std::size_t batch_pretrain = 64;
  double lr_base = 1e-4;
  std::size_t epochs_base = 50;
  std::size_t batch_base = 64;
  double lr_inc = 5e-5;
  std::size_t epochs_inc = 20;
  std::size_t batch_inc = 16;
  double lr_joint = 5e-5;
  std::size_t epochs_joint = 20;
  std::size_t batch_joint = 64;
  bool augment = true;
  double shift_range = 0.1;
  double scale_min = 0.8;
  double scale_max = 1.25;
  double dropout_prob = 0.0;

  // ablation switches
  bool use_microshape = true;
  std::string prototype_mode = "synthetic";
  double kappa = 0.3;
  bool freeze = true;
  std::string loss = "bce";

  std::uint64_t seed = 0;

  /// Throws ConfigError on out-of-range or inconsistent values.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();
bool is_config_key(const std::string& key);

/// Sets one key from its text form. Unknown keys and bad values throw
/// ConfigError naming the key.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source);
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "<config>");
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

/// All keys in table order, one "key = value" line each.
std::string format_config(const RunConfig& cfg);

/// Defaults, then the file, then MSFC_SEED, then the flag overrides.
RunConfig resolve_config(const std::filesystem::path& file, const std::map<std::string, std::string>& flags,
                         const char* env_seed);

}  // namespace msfc
