#include "ddp/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace ddp {

Feature stack(const std::vector<Feature>& items) {
  require(!items.empty(), "stack: no items");
  const Feature& first = items.front();
  int total = 0;
  for (const auto& f : items) {
    require(f.height == first.height && f.width == first.width && f.channels() == first.channels(),
            "stack: items differ in shape");
    total += f.batch;
  }
  Feature out(first.channels(), total, first.height, first.width);
  Eigen::Index col = 0;
  for (const auto& f : items) {
    out.data.middleCols(col, f.data.cols()) = f.data;
    col += f.data.cols();
  }
  return out;
}

namespace {

struct Tap {
  int lo, hi;
  double frac;
};

// Half-pixel-center source coordinate for each destination index.
std::vector<Tap> bilinear_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int i = 0; i < out_size; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in_size - 1);
    taps[i] = {lo, hi, src - lo};
  }
  return taps;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

Feature resize_bilinear(const Feature& in, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize_bilinear: empty output");
  if (out_h == in.height && out_w == in.width) return in;
  const auto ty = bilinear_taps(in.height, out_h);
  const auto tx = bilinear_taps(in.width, out_w);
  Feature out(in.channels(), in.batch, out_h, out_w);
  for (int b = 0; b < in.batch; ++b) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        const auto& [y0, y1, fy] = ty[y];
        const auto& [x0, x1, fx] = tx[x];
        out.data.col(out.column(b, y, x)) =
            (1 - fy) * ((1 - fx) * in.data.col(in.column(b, y0, x0)) + fx * in.data.col(in.column(b, y0, x1))) +
            fy * ((1 - fx) * in.data.col(in.column(b, y1, x0)) + fx * in.data.col(in.column(b, y1, x1)));
      }
    }
  }
  return out;
}

Feature reflect_pad_to_multiple(const Feature& in, int multiple) {
  const int h = (in.height + multiple - 1) / multiple * multiple;
  const int w = (in.width + multiple - 1) / multiple * multiple;
  if (h == in.height && w == in.width) return in;
  Feature out(in.channels(), in.batch, h, w);
  for (int b = 0; b < in.batch; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.data.col(out.column(b, y, x)) =
            in.data.col(in.column(b, reflect_index(y, in.height), reflect_index(x, in.width)));
  return out;
}

Feature crop(const Feature& in, int h, int w) {
  require(h <= in.height && w <= in.width, "crop: window larger than input");
  if (h == in.height && w == in.width) return in;
  Feature out(in.channels(), in.batch, h, w);
  for (int b = 0; b < in.batch; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.data.col(out.column(b, y, x)) = in.data.col(in.column(b, y, x));
  return out;
}

LabelMap downsample_nearest(const LabelMap& labels, int factor) {
  const int h = (labels.height + factor - 1) / factor;
  const int w = (labels.width + factor - 1) / factor;
  LabelMap out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = labels(std::min(y * factor + factor / 2, labels.height - 1),
                         std::min(x * factor + factor / 2, labels.width - 1));
  return out;
}

DepthMap downsample_bilinear(const DepthMap& depth, int factor) {
  const int h = (depth.height + factor - 1) / factor;
  const int w = (depth.width + factor - 1) / factor;
  const auto ty = bilinear_taps(depth.height, h);
  const auto tx = bilinear_taps(depth.width, w);
  DepthMap out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto& [y0, y1, fy] = ty[y];
      const auto& [x0, x1, fx] = tx[x];
      out(y, x) = (1 - fy) * ((1 - fx) * depth(y0, x0) + fx * depth(y0, x1)) +
                  fy * ((1 - fx) * depth(y1, x0) + fx * depth(y1, x1));
    }
  return out;
}

}  // namespace ddp
