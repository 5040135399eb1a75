#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ddp/model.hpp"
#include "ddp/tensor.hpp"

namespace ddp {

/// Scenes of colored rectangles, disks and triangles over a shaded background.
/// Class 0 is background; class c >= 1 is primitive type (c - 1) mod 3 drawn
/// in a class-specific hue band.
struct SyntheticSegSpec {
  uint64_t seed = 0;
  int count = 512;
  int size = 64;
  int num_classes = 4;
  int shapes_min = 1;
  int shapes_max = 4;
  double noise_std = 0.05;
  void validate() const;
};

/// Multi-octave value-noise heightfields rendered with Lambertian shading and
/// depth-dependent haze.
struct SyntheticDepthSpec {
  uint64_t seed = 0;
  int count = 512;
  int size = 64;
  double max_depth = 10.0;
  int octaves = 4;
  double noise_std = 0.02;
  void validate() const;
};

/// Images (3 x H x W, values roughly in [0, 1]) with either label or depth targets.
struct Dataset {
  Task task = Task::segmentation;
  int num_classes = 0;    // segmentation
  double max_depth = 0;   // depth
  std::vector<Feature> images;
  std::vector<LabelMap> labels;
  std::vector<DepthMap> depths;

  int size() const { return static_cast<int>(images.size()); }
};

Dataset gen_segmentation(const SyntheticSegSpec& spec);
Dataset gen_depth(const SyntheticDepthSpec& spec);

/// Writes images/NNNN.ddpa, targets/NNNN.ddpa and a key=value manifest.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// Mean absolute finite-difference gradient of a depth map.
double mean_gradient_magnitude(const DepthMap& depth);

}  // namespace ddp
