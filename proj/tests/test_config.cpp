#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "shadowpeft/config.hpp"

using namespace shadowpeft;

namespace {

std::string write_temp(const std::string& contents) {
  static int counter = 0;
  const auto path = std::filesystem::temp_directory_path() /
                    ("shadowpeft_cfg_" + std::to_string(++counter) + ".cfg");
  std::ofstream out(path);
  out << contents;
  return path.string();
}

}  // namespace

TEST_CASE("defaults validate") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.lambda == 0.05);
  CHECK(cfg.inject_alpha == 1.0);
  CHECK(cfg.inject_sigma == 0.02);
  CHECK(cfg.base.ln_eps == 1e-5);
}

TEST_CASE("file parsing with comments and overrides") {
  const std::string path = write_temp(
      "# toy run\n"
      "base.layers = 6\n"
      "train.lambda = 0.1   # heavier shadow loss\n"
      "shadow.mode = implicit\n"
      "\n"
      "update.enabled = false\n");
  RunConfig cfg = load_config(path, {"train.lambda=0.2", "run.seed=42"});
  CHECK(cfg.base.layers == 6);
  CHECK(cfg.lambda == 0.2);  // override wins over the file
  CHECK_FALSE(cfg.update_enabled);
  CHECK(cfg.seed == 42);
  std::filesystem::remove(path);
}

TEST_CASE("unrecognized keys are hard errors") {
  const std::string path = write_temp("base.layerz = 4\n");
  CHECK_THROWS_WITH_AS(load_config(path, {}), doctest::Contains("base.layerz"), ConfigError);
  std::filesystem::remove(path);

  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("inject.rankk", "4"), ConfigError);
}

TEST_CASE("malformed values name the key") {
  RunConfig cfg;
  CHECK_THROWS_WITH_AS(cfg.set("base.layers", "four"), doctest::Contains("base.layers"),
                       ConfigError);
  CHECK_THROWS_AS(cfg.set("train.lambda", "a lot"), ConfigError);
  CHECK_THROWS_AS(cfg.set("update.enabled", "maybe"), ConfigError);
  CHECK_THROWS_AS(cfg.set("run.seed", "-3"), ConfigError);
}

TEST_CASE("validation reports every violated field with its constraint") {
  RunConfig cfg;
  cfg.inject_alpha = -1.0;
  cfg.base.layers = 1;
  cfg.inject_rank = 64;  // >= hidden
  cfg.task = "no_such_task";
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("inject.alpha") != std::string::npos);
    CHECK(msg.find("strength must be > 0") != std::string::npos);
    CHECK(msg.find("base.layers") != std::string::npos);
    CHECK(msg.find("inject.rank") != std::string::npos);
    CHECK(msg.find("task.name") != std::string::npos);
  }
}

TEST_CASE("choice fields are validated") {
  RunConfig cfg;
  cfg.shadow.mode = "telepathic";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.shadow.mode = "implicit";
  cfg.precision = "f16";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.precision = "f32";
  cfg.inference_mode = "hybrid";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.inference_mode = "detached";
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("explicit shadow mode requires concrete dimensions") {
  RunConfig cfg;
  cfg.shadow.mode = "explicit";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.shadow.layers = 1;
  cfg.shadow.hidden = 8;
  cfg.shadow.heads = 2;
  cfg.shadow.mlp_width = 16;
  CHECK_NOTHROW(cfg.validate());
  cfg.shadow.hidden = 9;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("items lists every key and round-trips") {
  RunConfig cfg;
  cfg.lambda = 0.125;
  cfg.base.layers = 5;
  RunConfig other;
  for (const auto& [key, value] : cfg.items()) other.set(key, value);
  CHECK(other.lambda == 0.125);
  CHECK(other.base.layers == 5);
  CHECK(other.items() == cfg.items());
}

TEST_CASE("missing config file errors cleanly") {
  CHECK_THROWS_AS(load_config("/nonexistent/path.cfg", {}), ConfigError);
}

TEST_CASE("overrides must be key=value") {
  CHECK_THROWS_AS(config_from_overrides({"train.lambda"}), ConfigError);
}
