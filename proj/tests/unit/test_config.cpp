#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "../common/fixtures.hpp"
#include "ddp/config.hpp"

using namespace ddp;
using ddp::testing::scratch_dir;

TEST_CASE("defaults validate and resolve") {
  const ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.resolved_scale() == 0.01);
  ExperimentConfig bits;
  bits.encoding = "analog_bits";
  CHECK(bits.resolved_scale() == 0.1);
  bits.task = "depth";
  CHECK(bits.resolved_scale() == 0.01);
  CHECK(bits.codec_spec().strategy == Encoding::continuous);
  CHECK(c.time_spec().steps == 3);
}

TEST_CASE("file then overrides, later overrides win") {
  const auto dir = scratch_dir("config");
  {
    std::ofstream f(dir / "c.json");
    f << R"({"lr": 0.5, "steps": 7, "task": "depth"})";
  }
  ExperimentConfig c = load_config(dir / "c.json");
  CHECK(c.lr == 0.5);
  CHECK(c.steps == 7);
  CHECK(c.task == "depth");
  CHECK(c.decoder_depth == ExperimentConfig{}.decoder_depth);
  c.apply_overrides({"lr=0.25", "steps=2", "lr=0.125"});
  CHECK(c.lr == 0.125);
  CHECK(c.steps == 2);
}

TEST_CASE("json round trip") {
  ExperimentConfig c;
  c.scale = 0.3;
  c.seed = 42;
  c.encoding = "onehot";
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(*back.scale == 0.3);
  const auto dir = scratch_dir("config_save");
  save_config(dir / "c.json", c);
  CHECK(load_config(dir / "c.json").to_json() == c.to_json());
}

TEST_CASE("unknown keys and bad values are rejected") {
  ExperimentConfig c;
  CHECK_THROWS_AS(c.set("no_such_key", "1"), ValidationError);
  CHECK_THROWS_AS(c.set("steps", "three"), ValidationError);
  CHECK_THROWS_AS(c.apply_overrides({"steps"}), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"bogus", 1}}), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"steps", "x"}}), ValidationError);
  CHECK_THROWS_AS(load_config("/nonexistent/c.json"), IoError);
}

TEST_CASE("validation lists every offending field") {
  ExperimentConfig c;
  c.steps = 0;
  c.lr = -1;
  c.encoding = "zip";
  try {
    c.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("steps") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("encoding") != std::string::npos);
  }
}

TEST_CASE("output root override applies to relative paths only") {
  ExperimentConfig c;
  c.output_dir = "runs/x";
  ::setenv("DDP_OUTPUT_ROOT", "/tmp/ddp_root", 1);
  CHECK(c.resolved_output_dir() == std::filesystem::path("/tmp/ddp_root/runs/x"));
  c.output_dir = "/abs/out";
  CHECK(c.resolved_output_dir() == std::filesystem::path("/abs/out"));
  ::unsetenv("DDP_OUTPUT_ROOT");
  c.output_dir = "runs/x";
  CHECK(c.resolved_output_dir() == std::filesystem::path("runs/x"));
}

TEST_CASE("every key is settable") {
  for (const std::string& key : ExperimentConfig::keys()) {
    ExperimentConfig c;
    const auto j = c.to_json();
    if (!j.contains(key) || j.at(key).is_null()) continue;
    const auto& v = j.at(key);
    const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
    CHECK_NOTHROW(c.set(key, text));
    CHECK(c.to_json() == j);
  }
}
