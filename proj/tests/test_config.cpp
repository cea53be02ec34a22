// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "msfc/commands.hpp"
#include "msfc/config.hpp"
#include "msfc/error.hpp"

using namespace msfc;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto dir = std::filesystem::temp_directory_path() / "msfc_test_config";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / name, std::ios::binary) << text;
  return dir / name;
}

}  // namespace

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.d == 32);
  CHECK(c.relation_hidden == std::vector<std::size_t>{600, 300});
  CHECK(c.lr_base == 1e-4);
  CHECK(c.lr_inc == 5e-5);
  CHECK(c.batch_inc == 16);
  CHECK(c.epochs_inc == 20);
  CHECK(c.shots == 5);
  CHECK(c.exemplars == 1);
  CHECK(c.energy_threshold == 0.95);
  CHECK(c.use_microshape);
  CHECK(c.freeze);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("text form round trips every key") {
  RunConfig c;
  c.seed = 77;
  c.families = {"ball", "cube"};
  c.relation_hidden = {12, 7};
  c.lr_inc = 3.25e-5;
  c.use_svd = false;
  c.run_dir = "some/where";
  const std::string text = format_config(c);
  RunConfig back;
  apply_config_text(back, text);
  CHECK(format_config(back) == text);
  for (const auto& k : config_keys()) {
    CHECK(is_config_key(k.name));
    CHECK(get_config_value(back, k.name) == get_config_value(c, k.name));
  }
  CHECK_FALSE(is_config_key("pretrain_epochs"));
}

TEST_CASE("parsing") {
  SUBCASE("comments and blank lines") {
    RunConfig c;
    apply_config_text(c, "# desk\n\nseed = 4  # trailing\nd=16\n");
    CHECK(c.seed == 4);
    CHECK(c.d == 16);
  }
  SUBCASE("unknown key is named") {
    RunConfig c;
    try {
      apply_config_text(c, "d = 8\nwidth = 3\n", "x.cfg");
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("width") != std::string::npos);
    }
  }
  SUBCASE("bad values") {
    RunConfig c;
    CHECK_THROWS_AS(set_config_value(c, "d", "eight"), ConfigError);
    CHECK_THROWS_AS(set_config_value(c, "use_svd", "maybe"), ConfigError);
    CHECK_THROWS_AS(set_config_value(c, "lr_base", "1e-3x"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "just words\n"), ConfigError);
  }
  SUBCASE("validation") {
    RunConfig c;
    c.energy_threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.exemplars = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.loss = "hinge";
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_CASE("precedence: defaults, file, environment, flags") {
  const auto file = write_temp("p.cfg", "seed = 5\nd = 16\nepochs_base = 3\n");
  SUBCASE("defaults only") {
    const RunConfig c = resolve_config({}, {}, nullptr);
    CHECK(c.seed == 0);
    CHECK(c.d == 32);
  }
  SUBCASE("file over defaults") {
    const RunConfig c = resolve_config(file, {}, nullptr);
    CHECK(c.seed == 5);
    CHECK(c.d == 16);
    CHECK(c.epochs_base == 3);
  }
  SUBCASE("environment seed over file") {
    const RunConfig c = resolve_config(file, {}, "9");
    CHECK(c.seed == 9);
    CHECK(c.d == 16);
    CHECK(resolve_config(file, {}, "").seed == 5);
  }
  SUBCASE("flags over everything") {
    const RunConfig c = resolve_config(file, {{"seed", "12"}, {"d", "8"}}, "9");
    CHECK(c.seed == 12);
    CHECK(c.d == 8);
    CHECK(c.epochs_base == 3);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(resolve_config(file, {}, "nine"), ConfigError);
    CHECK_THROWS_AS(resolve_config(file, {{"bogus", "1"}}, nullptr), ConfigError);
    CHECK_THROWS_AS(resolve_config(file.parent_path() / "absent.cfg", {}, nullptr), InputError);
  }
}

TEST_CASE("engine and pretrain settings follow the config") {
  RunConfig c;
  c.d = 24;
  c.relation_hidden = {40, 20};
  c.lr_base = 2e-3;
  c.epochs_inc = 7;
  c.use_microshape = false;
  c.loss = "mse";
  c.freeze = false;
  const EngineConfig e = engine_config(c);
  CHECK(e.d == 24);
  CHECK(e.relation_hidden == std::vector<std::size_t>{40, 20});
  CHECK(e.base.learning_rate == 2e-3);
  CHECK(e.increment.epochs == 7);
  CHECK_FALSE(e.use_microshape);
  CHECK(e.loss == LossVariant::mse);
  CHECK_FALSE(e.freeze);
  c.q = 16;
  c.backbone_hidden = {8, 8};
  const PretrainConfig p = pretrain_config(c);
  CHECK(p.layers == std::vector<std::size_t>{8, 8, 16});
  CHECK(configured_families(c).size() == c.families.size());
}
