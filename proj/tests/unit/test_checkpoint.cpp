#include <doctest.h>

#include "../common/fixtures.hpp"
#include "ddp/array_io.hpp"
#include "ddp/checkpoint.hpp"

using namespace ddp;
using ddp::testing::randomize;
using ddp::testing::scratch_dir;
using ddp::testing::tiny_config;

namespace {

TrainState make_state(const ExperimentConfig& c) {
  TrainState s(Model(c.model_config(), c.seed), c.seed);
  randomize(s.model, 5);
  for (size_t i = 0; i < s.adam_m.size(); ++i) {
    s.adam_m[i].setConstant(0.25 * static_cast<double>(i));
    s.adam_v[i].setConstant(1.5);
  }
  s.step = 17;
  s.phase = Phase::self_aligned;
  s.rng.normal();
  return s;
}

}  // namespace

TEST_CASE("save, load and save again is byte identical") {
  const ExperimentConfig c = tiny_config();
  const TrainState s = make_state(c);
  const auto dir = scratch_dir("ckpt_roundtrip");
  write_checkpoint(dir / "a.ckpt", c, s);
  const Checkpoint back = read_checkpoint(dir / "a.ckpt");
  CHECK(back.state.step == 17);
  CHECK(back.state.phase == Phase::self_aligned);
  CHECK(back.state.rng == s.rng);
  CHECK(back.config.to_json() == c.to_json());
  for (int i = 0; i < s.model.params().size(); ++i) {
    CHECK(back.state.model.params()[i] == s.model.params()[i]);
    CHECK(back.state.adam_m[i] == s.adam_m[i]);
    CHECK(back.state.adam_v[i] == s.adam_v[i]);
  }
  write_checkpoint(dir / "b.ckpt", back.config, back.state);
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
}

TEST_CASE("manifest records step and tensor list") {
  const ExperimentConfig c = tiny_config("depth");
  const TrainState s = make_state(c);
  const auto dir = scratch_dir("ckpt_manifest");
  write_checkpoint(dir / "a.ckpt", c, s);
  const CheckpointContents contents = read_checkpoint_contents(dir / "a.ckpt");
  CHECK(contents.manifest.at("step") == 17);
  CHECK(contents.manifest.at("format") == "ddp-checkpoint");
  CHECK(contents.tensors.size() == 3 * static_cast<size_t>(s.model.params().size()));
  size_t param_scalars = 0;
  for (const auto& [name, m] : contents.tensors)
    if (name.rfind("param/", 0) == 0) param_scalars += static_cast<size_t>(m.size());
  CHECK(param_scalars == parameter_count(c.model_config()));
  CHECK(param_scalars == s.model.params().scalar_count());
}

TEST_CASE("restoring into a different decoder names the tensor") {
  ExperimentConfig c = tiny_config();
  const TrainState s = make_state(c);
  const auto dir = scratch_dir("ckpt_mismatch");
  write_checkpoint(dir / "a.ckpt", c, s);
  c.decoder_width = 10;
  TrainState other(Model(c.model_config(), 0), 0);
  try {
    restore_state(other, read_checkpoint_contents(dir / "a.ckpt"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("param/") != std::string::npos);
    CHECK(msg.find("shape") != std::string::npos);
  }
}

TEST_CASE("corrupted checkpoints are format errors") {
  const ExperimentConfig c = tiny_config();
  const auto dir = scratch_dir("ckpt_corrupt");
  write_checkpoint(dir / "a.ckpt", c, make_state(c));
  std::vector<uint8_t> bytes = read_file(dir / "a.ckpt");
  SUBCASE("magic") { bytes[1] = 'Z'; }
  SUBCASE("version") { bytes[4] = 7; }
  SUBCASE("truncated") { bytes.resize(bytes.size() - 3); }
  SUBCASE("trailing") { bytes.push_back(1); }
  write_file(dir / "b.ckpt", bytes);
  CHECK_THROWS_AS(read_checkpoint(dir / "b.ckpt"), FormatError);
}

TEST_CASE("missing checkpoint is an I/O error") {
  CHECK_THROWS_AS(read_checkpoint("/nonexistent/x.ckpt"), IoError);
}
