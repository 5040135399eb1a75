#include <doctest.h>

#include <sstream>

#include "../common/fixtures.hpp"
#include "ddp/array_io.hpp"
#include "ddp/checkpoint.hpp"
#include "ddp/cli.hpp"
#include "ddp/inference.hpp"

using namespace ddp;
using ddp::testing::scratch_dir;
using ddp::testing::tiny_config;

namespace {

struct Run {
  int code;
  std::string out, err;
  nlohmann::json json() const { return nlohmann::json::parse(out); }
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Writes a tiny config whose output lands in `dir`.
std::string tiny_config_file(const std::filesystem::path& dir, const std::string& task = "segmentation") {
  ExperimentConfig c = tiny_config(task);
  c.output_dir = (dir / "run").string();
  save_config(dir / "config.json", c);
  return (dir / "config.json").string();
}

// One trained tiny checkpoint shared by the sampling and evaluation tests.
std::filesystem::path trained_checkpoint() {
  static const std::filesystem::path ckpt = [] {
    const auto dir = scratch_dir("cli_trained");
    const Run r = cli({"train", "--config", tiny_config_file(dir), "--quiet"});
    REQUIRE(r.code == 0);
    return dir / "run" / "final.ckpt";
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("train with a zero budget writes the initialized checkpoint") {
  const auto dir = scratch_dir("cli_zero");
  const Run r = cli({"train", "--config", tiny_config_file(dir), "--set", "total_steps=0", "--set",
                     "self_aligned_steps=0", "--quiet"});
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "run" / "final.ckpt"));
  const Checkpoint ck = read_checkpoint(dir / "run" / "final.ckpt");
  CHECK(ck.state.step == 0);
  const Model fresh(ck.config.model_config(), ck.config.seed);
  for (int i = 0; i < fresh.params().size(); ++i) CHECK(ck.state.model.params()[i] == fresh.params()[i]);
  CHECK(r.json().at("steps") == 0);
}

TEST_CASE("command-line overrides beat the file") {
  const auto dir = scratch_dir("cli_precedence");
  const Run r = cli({"train", "--config", tiny_config_file(dir), "--set", "total_steps=0", "--set",
                     "self_aligned_steps=0", "--set", "decoder_width=5", "--quiet"});
  REQUIRE(r.code == 0);
  CHECK(read_checkpoint(dir / "run" / "final.ckpt").config.decoder_width == 5);
}

TEST_CASE("validation failures exit 1 and write nothing") {
  const auto dir = scratch_dir("cli_invalid");
  const std::string cfg = tiny_config_file(dir);
  const Run unknown = cli({"train", "--config", cfg, "--set", "bogus=1"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("bogus") != std::string::npos);
  const Run bad = cli({"train", "--config", cfg, "--set", "self_aligned_steps=100"});
  CHECK(bad.code == 1);
  CHECK_FALSE(std::filesystem::exists(dir / "run"));
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"train", "--config", (dir / "missing.json").string()}).code != 0);
}

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ValidationError("x")) == kExitValidation);
  CHECK(exit_code_for(ContractError("x")) == kExitValidation);
  CHECK(exit_code_for(IoError("x")) == kExitIo);
  CHECK(exit_code_for(FormatError("x")) == kExitIo);
  CHECK(exit_code_for(DivergenceError("x")) == kExitRuntime);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitRuntime);
}

TEST_CASE("sample at several step counts from one checkpoint") {
  const auto ckpt = trained_checkpoint();
  const auto dir = scratch_dir("cli_sample");
  for (const int steps : {1, 3}) {
    const auto out = dir / ("s" + std::to_string(steps));
    const Run r = cli({"sample", "--checkpoint", ckpt.string(), "--steps", std::to_string(steps), "--limit", "2",
                       "--out", out.string(), "--palette"});
    REQUIRE(r.code == 0);
    const Array traj = read_array(out / "0000_trajectory.ddpa");
    REQUIRE(traj.shape.size() == 3);
    CHECK(traj.shape[0] == static_cast<uint64_t>(steps));
    CHECK(traj.shape[1] == 16);
    CHECK(std::filesystem::exists(out / "0001_final.ddpa"));
    CHECK(std::filesystem::exists(out / "0001_uncertainty.ddpa"));
    CHECK(std::filesystem::exists(out / "0000_final.ppm"));
    CHECK_FALSE(std::filesystem::exists(out / "0002_final.ddpa"));
  }
}

TEST_CASE("sampling twice with one seed gives identical files") {
  const auto ckpt = trained_checkpoint();
  const auto dir = scratch_dir("cli_sample_determinism");
  for (const char* sub : {"a", "b"})
    REQUIRE(cli({"sample", "--checkpoint", ckpt.string(), "--limit", "2", "--seed", "9", "--out", (dir / sub).string()})
                .code == 0);
  for (const char* f : {"0000_final.ddpa", "0000_trajectory.ddpa", "0001_uncertainty.ddpa"})
    CHECK(read_file(dir / "a" / f) == read_file(dir / "b" / f));
}

TEST_CASE("sample rejects a dataset for another task") {
  const auto ckpt = trained_checkpoint();
  const auto dir = scratch_dir("cli_mismatch");
  REQUIRE(cli({"gendata", "--config", tiny_config_file(dir, "depth"), "--out", (dir / "depth_val").string()}).code == 0);
  const Run r = cli({"sample", "--checkpoint", ckpt.string(), "--input", (dir / "depth_val").string(), "--out",
                     (dir / "o").string()});
  CHECK(r.code == kExitIo);
}

TEST_CASE("eval reports decoder calls and a consistent mIoU") {
  const auto ckpt = trained_checkpoint();
  const auto dir = scratch_dir("cli_eval");
  const Run r = cli({"eval", "--checkpoint", ckpt.string(), "--steps", "2", "--out", (dir / "m.json").string()});
  REQUIRE(r.code == 0);
  const auto j = r.json();
  CHECK(j.at("decoder_calls_per_image") == 2.0);
  CHECK(j.at("steps") == 2);
  CHECK(std::filesystem::exists(dir / "m.json"));

  const Checkpoint ck = read_checkpoint(ckpt);
  EvalOptions eo;
  eo.time = ck.config.time_spec();
  eo.time.steps = 2;
  const EvalResult direct = evaluate(ck.state.model, ck.config.make_dataset(true), ck.config.schedule_params(), eo);
  CHECK(j.at("miou").get<double>() == miou(direct.confusion).mean_iou);
  CHECK(j.at("miou").get<double>() == direct.primary_metric());
}

TEST_CASE("eval on an empty validation set exits 1") {
  const auto ckpt = trained_checkpoint();
  const auto dir = scratch_dir("cli_eval_empty");
  ExperimentConfig c = tiny_config();
  c.val_count = 0;
  write_dataset(dir / "empty", c.make_dataset(true));
  CHECK(cli({"eval", "--checkpoint", ckpt.string(), "--input", (dir / "empty").string()}).code == kExitValidation);
}

TEST_CASE("ablating steps trains once and evaluates each value") {
  const auto dir = scratch_dir("cli_ablate_steps");
  const Run r = cli({"ablate", "--config", tiny_config_file(dir), "--axis", "steps", "--values", "1,2,3,4", "--quiet"});
  REQUIRE(r.code == 0);
  const auto table = r.json();
  REQUIRE(table.at("rows").size() == 4);
  CHECK(std::filesystem::exists(dir / "run" / "steps" / "final.ckpt"));
  int trained = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "run"))
    if (e.is_directory()) ++trained;
  CHECK(trained == 1);
  for (int i = 0; i < 4; ++i) CHECK(table["rows"][i].at("decoder_calls_per_image") == static_cast<double>(i + 1));
  CHECK(std::filesystem::exists(dir / "run" / "ablation_steps.json"));

  const auto svg = dir / "curve.svg";
  REQUIRE(cli({"plot", "--input", (dir / "run" / "ablation_steps.json").string(), "--kind", "steps_curve", "--out",
               svg.string()}).code == 0);
  const auto first = read_file(svg);
  CHECK_FALSE(first.empty());
  REQUIRE(cli({"plot", "--input", (dir / "run" / "ablation_steps.json").string(), "--kind", "steps_curve", "--out",
               svg.string()}).code == 0);
  CHECK(read_file(svg) == first);
}

TEST_CASE("ablating decoder depth reports increasing parameter counts") {
  ExperimentConfig c = tiny_config();
  c.total_steps = 1;
  c.self_aligned_steps = 0;
  c.val_count = 1;
  c.output_dir = (scratch_dir("cli_ablate_depth") / "run").string();
  const auto table = run_ablation(c, "decoder_depth", {"1", "2", "4", "6"}, 2);
  REQUIRE(table.at("rows").size() == 4);
  for (int i = 1; i < 4; ++i)
    CHECK(table["rows"][i].at("params").get<uint64_t>() > table["rows"][i - 1].at("params").get<uint64_t>());
}

TEST_CASE("ablating encoding gives one row per strategy") {
  ExperimentConfig c = tiny_config();
  c.total_steps = 1;
  c.self_aligned_steps = 0;
  c.val_count = 1;
  c.output_dir = (scratch_dir("cli_ablate_encoding") / "run").string();
  const auto table = run_ablation(c, "encoding", {"onehot", "analog_bits", "embedding"});
  REQUIRE(table.at("rows").size() == 3);
  CHECK(table["rows"][1].at("value") == "analog_bits");
  CHECK_THROWS_AS(run_ablation(c, "colour", {"1"}), ValidationError);
}

TEST_CASE("plot errors") {
  const auto dir = scratch_dir("cli_plot");
  CHECK(cli({"plot", "--input", (dir / "none.json").string(), "--kind", "steps_curve", "--out",
             (dir / "x.svg").string()}).code == kExitIo);
  write_file(dir / "bad.json", std::vector<uint8_t>{'{', '"', 'a'});
  CHECK(cli({"plot", "--input", (dir / "bad.json").string(), "--kind", "steps_curve", "--out",
             (dir / "x.svg").string()}).code == kExitIo);
  CHECK_FALSE(std::filesystem::exists(dir / "x.svg"));

  Grid<double> unc(4, 4, 0.0);
  unc(1, 1) = 1.0;
  write_array(dir / "u.ddpa", to_array(unc));
  REQUIRE(cli({"plot", "--input", (dir / "u.ddpa").string(), "--kind", "uncertainty_overlay", "--zoom", "2", "--out",
               (dir / "u.ppm").string()}).code == 0);
  CHECK(std::filesystem::exists(dir / "u.ppm"));
}
