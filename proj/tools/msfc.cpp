// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "msfc/commands.hpp"
#include "msfc/config.hpp"
#include "msfc/error.hpp"

namespace {

int exit_code(const std::string& kind) {
  if (kind == "config") return 2;
  if (kind == "input" || kind == "load") return 3;
  if (kind == "provenance") return 4;
  return 1;
}

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& extras) {
  std::map<std::string, std::string> flags;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw msfc::ConfigError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    std::string value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      value = extras[++i];
    } else {
      throw msfc::ConfigError("flag --" + key + " needs a value");
    }
    if (!msfc::is_config_key(key)) throw msfc::ConfigError("unknown config key '" + key + "'");
    flags[key] = value;
  }
  return flags;
}

std::string key_help() {
  std::string s = "Config keys (use --key=value):\n";
  for (const auto& k : msfc::config_keys()) s += "  " + k.name + "  " + k.help + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot class-incremental learning on point clouds with microshape features"};
  app.require_subcommand(1);
  app.footer(key_help());

  std::string config_file;
  std::string baseline_kind;
  std::vector<std::string> report_dirs;
  std::string report_out;

  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_file, "key = value config file");
    sub->allow_extras();
    return sub;
  };
  add("generate", "write the procedural dataset");
  add("protocol", "build the task protocol from the manifest");
  add("pretrain", "pretrain backbone_star on the base task");
  add("basis", "cluster backbone_star features and build the microshape basis");
  add("run", "train and evaluate the incremental pipeline");
  CLI::App* baseline = add("baseline", "run the ft or joint reference baseline");
  baseline->add_option("kind", baseline_kind, "ft | joint")->required();
  CLI::App* report = app.add_subcommand("report", "compare report.csv files of several runs");
  report->add_option("runs", report_dirs, "run directories")->required();
  report->add_option("--out", report_out, "also write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (name == "report") {
      const std::string table = msfc::cmd_report({report_dirs.begin(), report_dirs.end()});
      std::cout << table;
      if (!report_out.empty()) {
        std::ofstream out(report_out, std::ios::binary);
        if (!out) throw msfc::InputError("cannot write " + report_out);
        out << table;
      }
      return 0;
    }
    const auto flags = parse_overrides(sub->remaining());
    const msfc::RunConfig cfg = msfc::resolve_config(config_file, flags, std::getenv("MSFC_SEED"));
    if (name == "generate") msfc::cmd_generate(cfg, std::cout);
    else if (name == "protocol") msfc::cmd_protocol(cfg, std::cout);
    else if (name == "pretrain") msfc::cmd_pretrain(cfg, std::cout);
    else if (name == "basis") msfc::cmd_basis(cfg, std::cout);
    else if (name == "run") msfc::cmd_run(cfg, std::cout);
    else if (name == "baseline") msfc::cmd_baseline(cfg, baseline_kind, std::cout);
    return 0;
  } catch (const msfc::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
