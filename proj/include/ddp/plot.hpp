#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ddp/tensor.hpp"

namespace ddp {

using Rgb = std::array<uint8_t, 3>;
using RgbImage = Grid<Rgb>;

/// Binary PPM (P6).
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

/// Fixed, well-separated colors; label 0 is black.
RgbImage label_palette_image(const LabelMap& labels);
/// Depth in [0, max_depth] to a blue (near) to yellow (far) ramp.
RgbImage depth_image(const DepthMap& depth, double max_depth);

/// Uncertainty in [0, 1] as gray levels; pixels set in `errors` (when given)
/// are tinted red. Each pixel becomes a zoom x zoom block.
RgbImage uncertainty_overlay(const Grid<double>& uncertainty, const Grid<uint8_t>* errors, int zoom);

/// Metric-versus-steps line chart from an ablation table over the steps axis
/// ({"axis": "steps", "metric": name, "rows": [{"value": n, "primary": m}, ...]}).
/// Throws FormatError on a malformed table.
std::string steps_curve_svg(const nlohmann::json& table);

}  // namespace ddp
