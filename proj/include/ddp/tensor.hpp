#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "ddp/errors.hpp"

namespace ddp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense 2-D grid stored row-major (y * width + x).
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  T& operator()(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  const T& operator()(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return values.size(); }

  bool operator==(const Grid&) const = default;
};

using LabelMap = Grid<int32_t>;
using DepthMap = Grid<double>;

/// A batch of channel-major feature maps.
///
/// `data` has one row per channel and one column per pixel; the column of
/// pixel (b, y, x) is (b * height + y) * width + x. A single image is a
/// batch of one.
struct Feature {
  Matrix data;
  int batch = 1;
  int height = 0;
  int width = 0;

  Feature() = default;
  Feature(int channels, int b, int h, int w) : data(Matrix::Zero(channels, static_cast<Eigen::Index>(b) * h * w)), batch(b), height(h), width(w) {}

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels_per_item() const { return height * width; }
  Eigen::Index column(int b, int y, int x) const { return (static_cast<Eigen::Index>(b) * height + y) * width + x; }

  bool same_layout(const Feature& other) const {
    return batch == other.batch && height == other.height && width == other.width;
  }

  /// Columns belonging to batch item `b`.
  auto item(int b) { return data.middleCols(static_cast<Eigen::Index>(b) * pixels_per_item(), pixels_per_item()); }
  auto item(int b) const { return data.middleCols(static_cast<Eigen::Index>(b) * pixels_per_item(), pixels_per_item()); }

  Feature slice(int b) const {
    Feature out;
    out.data = item(b);
    out.batch = 1;
    out.height = height;
    out.width = width;
    return out;
  }
};

/// Stacks single-item features of identical layout into one batch.
Feature stack(const std::vector<Feature>& items);

/// Bilinear resize (half-pixel centers, edge clamped) of every channel.
Feature resize_bilinear(const Feature& in, int out_h, int out_w);

/// Reflect-pads each item at the bottom/right so both dims become multiples of `multiple`.
Feature reflect_pad_to_multiple(const Feature& in, int multiple);

/// Crops each item to its top-left `h` x `w` window.
Feature crop(const Feature& in, int h, int w);

/// Nearest-neighbour downsampling of a label grid by an integer factor, sampling block centers.
LabelMap downsample_nearest(const LabelMap& labels, int factor);

/// Bilinear downsampling of a real grid to (ceil(h/factor), ceil(w/factor)).
DepthMap downsample_bilinear(const DepthMap& depth, int factor);

}  // namespace ddp
