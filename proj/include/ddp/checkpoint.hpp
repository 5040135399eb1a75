#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddp/config.hpp"
#include "ddp/training.hpp"

namespace ddp {

/// Raw checkpoint contents: the structured-text manifest and the named arrays.
///
/// File layout: "DDPC" | version u16 | manifest length u64 | manifest (JSON) |
/// tensor count u32 | per tensor: name length u16, name, DDPA-encoded array.
/// Tensor names are "param/<name>", "adam_m/<name>" and "adam_v/<name>".
struct CheckpointContents {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

struct Checkpoint {
  ExperimentConfig config;
  TrainState state;
};

void write_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, const TrainState& state);
CheckpointContents read_checkpoint_contents(const std::filesystem::path& path);
/// Rebuilds the model from the stored config and restores the full training state.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies stored tensors into an existing state. Throws FormatError naming the
/// first tensor that is missing or whose shape differs from the state's model.
void restore_state(TrainState& state, const CheckpointContents& contents);

}  // namespace ddp
