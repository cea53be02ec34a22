// SPDX-License-Identifier: Apache-2.0
#include "msfc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>
#include <variant>

#include "msfc/error.hpp"

namespace msfc {

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed is stored through a size_t field");

using Field = std::variant<std::string RunConfig::*, std::size_t RunConfig::*, double RunConfig::*, bool RunConfig::*,
                           std::vector<std::string> RunConfig::*, std::vector<std::size_t> RunConfig::*>;

struct Entry {
  const char* name;
  const char* help;
  Field field;
};

const std::vector<Entry>& table() {
  static const std::vector<Entry> t = {
      {"data_dir", "generated dataset directory", &RunConfig::data_dir},
      {"work_dir", "protocol, backbone and basis artifacts", &RunConfig::work_dir},
      {"run_dir", "output directory of run/baseline (default <work_dir>/<command>)", &RunConfig::run_dir},
      {"prototype_file", "word-vector file for prototype_mode=language", &RunConfig::prototype_file},
      {"families", "comma-separated class presets to generate", &RunConfig::families},
      {"train_count", "training instances per class and domain", &RunConfig::train_count},
      {"test_count", "test instances per class and domain", &RunConfig::test_count},
      {"points", "points per cloud (l)", &RunConfig::points},
      {"corruption.jitter", "real-domain gaussian jitter sigma", &RunConfig::jitter},
      {"corruption.occlusion", "real-domain occluded fraction", &RunConfig::occlusion},
      {"corruption.clutter", "real-domain clutter fraction", &RunConfig::clutter},
      {"corruption.density_bias", "real-domain hemisphere drop probability", &RunConfig::density_bias},
      {"protocol_mode", "within | cross | dfsl | single", &RunConfig::protocol_mode},
      {"base_classes", "cross/dfsl: synthetic base classes (empty: all)", &RunConfig::base_classes},
      {"novel_classes", "cross/dfsl: real novel classes (empty: all)", &RunConfig::novel_classes},
      {"protocol_domain", "within/single: domain to use", &RunConfig::protocol_domain},
      {"n_tasks", "within: total task count including the base task", &RunConfig::n_tasks},
      {"base_count", "within: base class count (0: half)", &RunConfig::base_count},
      {"novel_per_task", "cross: novel classes per task", &RunConfig::novel_per_task},
      {"shots", "k samples per novel class", &RunConfig::shots},
      {"exemplars", "stored exemplars per class", &RunConfig::exemplars},
      {"episodes", "dfsl: episode count", &RunConfig::episodes},
      {"validation", "split the base classes 60/40 for validation", &RunConfig::validation},
      {"q", "backbone feature width", &RunConfig::q},
      {"backbone_hidden", "backbone hidden widths before q", &RunConfig::backbone_hidden},
      {"m", "K-means cluster count", &RunConfig::m},
      {"feature_cap", "max point features clustered", &RunConfig::feature_cap},
      {"kmeans_iters", "max Lloyd iterations", &RunConfig::kmeans_iters},
      {"energy_threshold", "fraction of singular-value energy kept", &RunConfig::energy_threshold},
      {"energy_mode", "squared | linear", &RunConfig::energy_mode},
      {"use_svd", "false: raw normalized centers as the basis", &RunConfig::use_svd},
      {"d", "embedding and prototype width", &RunConfig::d},
      {"relation_hidden", "relation module hidden widths", &RunConfig::relation_hidden},
      {"lr_pretrain", "backbone pretraining learning rate", &RunConfig::lr_pretrain},
      {"epochs_pretrain", "backbone pretraining epochs", &RunConfig::epochs_pretrain},
      {"batch_pretrain", "backbone pretraining batch size", &RunConfig::batch_pretrain},
      {"lr_base", "base task learning rate", &RunConfig::lr_base},
      {"epochs_base", "base task epochs", &RunConfig::epochs_base},
      {"batch_base", "base task batch size", &RunConfig::batch_base},
      {"lr_inc", "incremental task learning rate", &RunConfig::lr_inc},
      {"epochs_inc", "incremental task epochs", &RunConfig::epochs_inc},
      {"batch_inc", "incremental task batch size", &RunConfig::batch_inc},
      {"lr_joint", "joint baseline learning rate", &RunConfig::lr_joint},
      {"epochs_joint", "joint baseline epochs per task", &RunConfig::epochs_joint},
      {"batch_joint", "joint baseline batch size", &RunConfig::batch_joint},
      {"augment", "shift/scale augmentation during training", &RunConfig::augment},
      {"shift_range", "augmentation max shift per axis", &RunConfig::shift_range},
      {"scale_min", "augmentation min scale", &RunConfig::scale_min},
      {"scale_max", "augmentation max scale", &RunConfig::scale_max},
      {"dropout_prob", "augmentation point dropout probability", &RunConfig::dropout_prob},
      {"use_microshape", "false: max-pooled backbone features feed W", &RunConfig::use_microshape},
      {"prototype_mode", "language | feature | synthetic", &RunConfig::prototype_mode},
      {"kappa", "synthetic prototype noise scale", &RunConfig::kappa},
      {"freeze", "freeze backbone and W after the base task", &RunConfig::freeze},
      {"loss", "bce | mse", &RunConfig::loss},
      {"seed", "global seed", &RunConfig::seed},
  };
  return t;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : table())
    if (key == e.name) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const std::string v = trim(value);
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean '" + value + "' for key '" + key + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : table()) k.push_back({e.name, e.help});
    return k;
  }();
  return keys;
}

bool is_config_key(const std::string& key) {
  for (const auto& e : table())
    if (key == e.name) return true;
  return false;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry& e = find_entry(key);
  std::visit(overloaded{
                 [&](std::string RunConfig::*f) { cfg.*f = trim(value); },
                 [&](std::size_t RunConfig::*f) { cfg.*f = parse_number<std::size_t>(key, value); },
                 [&](double RunConfig::*f) { cfg.*f = parse_number<double>(key, value); },
                 [&](bool RunConfig::*f) { cfg.*f = parse_bool(key, value); },
                 [&](std::vector<std::string> RunConfig::*f) { cfg.*f = split_list(value); },
                 [&](std::vector<std::size_t> RunConfig::*f) {
                   std::vector<std::size_t> v;
                   for (const auto& item : split_list(value)) v.push_back(parse_number<std::size_t>(key, item));
                   cfg.*f = std::move(v);
                 },
             },
             e.field);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const Entry& e = find_entry(key);
  return std::visit(overloaded{
                        [&](std::string RunConfig::*f) { return cfg.*f; },
                        [&](std::size_t RunConfig::*f) { return std::to_string(cfg.*f); },
                        [&](double RunConfig::*f) { return format_double(cfg.*f); },
                        [&](bool RunConfig::*f) { return std::string(cfg.*f ? "true" : "false"); },
                        [&](std::vector<std::string> RunConfig::*f) {
                          std::string s;
                          for (const auto& x : cfg.*f) s += (s.empty() ? "" : ",") + x;
                          return s;
                        },
                        [&](std::vector<std::size_t> RunConfig::*f) {
                          std::string s;
                          for (auto x : cfg.*f) s += (s.empty() ? "" : ",") + std::to_string(x);
                          return s;
                        },
                    },
                    e.field);
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  for (const auto& [k, v] : parse_key_values(text, source)) {
    try {
      set_config_value(cfg, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ": " + e.what());
    }
  }
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str(), path.string());
  return base;
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : table()) out += std::string(e.name) + " = " + get_config_value(cfg, e.name) + "\n";
  return out;
}

RunConfig resolve_config(const std::filesystem::path& file, const std::map<std::string, std::string>& flags,
                         const char* env_seed) {
  RunConfig cfg;
  if (!file.empty()) cfg = load_config_file(file, cfg);
  if (env_seed && *env_seed) {
    try {
      set_config_value(cfg, "seed", env_seed);
    } catch (const ConfigError&) {
      throw ConfigError("invalid MSFC_SEED '" + std::string(env_seed) + "'");
    }
  }
  for (const auto& [k, v] : flags) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(points >= 1, "points must be >= 1");
  require(train_count >= 1 && test_count >= 1, "train_count and test_count must be >= 1");
  require(q >= 1 && m >= 1 && d >= 1, "q, m and d must be >= 1");
  require(energy_threshold > 0.0 && energy_threshold <= 1.0, "energy_threshold must be in (0, 1]");
  require(energy_mode == "squared" || energy_mode == "linear", "energy_mode must be squared or linear");
  require(protocol_mode == "within" || protocol_mode == "cross" || protocol_mode == "dfsl" || protocol_mode == "single",
          "protocol_mode must be within, cross, dfsl or single");
  require(protocol_domain == "synthetic" || protocol_domain == "real", "protocol_domain must be synthetic or real");
  require(prototype_mode == "language" || prototype_mode == "feature" || prototype_mode == "synthetic",
          "prototype_mode must be language, feature or synthetic");
  require(loss == "bce" || loss == "mse", "loss must be bce or mse");
  require(shots >= 1, "shots must be >= 1");
  require(exemplars == 1, "exactly one exemplar per class is supported");
  require(batch_pretrain >= 1 && batch_base >= 1 && batch_inc >= 1 && batch_joint >= 1, "batch sizes must be >= 1");
  require(lr_pretrain > 0 && lr_base > 0 && lr_inc > 0 && lr_joint > 0, "learning rates must be positive");
  require(scale_min > 0.0 && scale_min <= scale_max, "need 0 < scale_min <= scale_max");
  require(dropout_prob >= 0.0 && dropout_prob < 1.0, "dropout_prob must be in [0, 1)");
  require(shift_range >= 0.0, "shift_range must be >= 0");
  require(kappa >= 0.0, "kappa must be >= 0");
  require(!relation_hidden.empty(), "relation_hidden needs at least one width");
  require(novel_per_task >= 1 && n_tasks >= 1, "novel_per_task and n_tasks must be >= 1");
  require(!families.empty(), "families must not be empty");
  std::set<std::string> seen;
  for (const auto& f : families) require(seen.insert(f).second, "duplicate family '" + f + "'");
}

}  // namespace msfc
