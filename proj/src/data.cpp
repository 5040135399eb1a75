#include "ddp/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "ddp/array_io.hpp"
#include "ddp/rng.hpp"

namespace ddp {

namespace {

// Independent per-item stream derived from (seed, index).
uint64_t item_seed(uint64_t seed, uint64_t index) {
  uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

void SyntheticSegSpec::validate() const {
  std::string bad;
  if (num_classes < 2) bad += " num_classes";
  if (size < 16) bad += " size";
  if (count < 0) bad += " count";
  if (shapes_min < 0 || shapes_max < shapes_min) bad += " shapes_min/shapes_max";
  if (noise_std < 0) bad += " noise_std";
  if (!bad.empty()) throw ValidationError("invalid segmentation data spec:" + bad);
}

void SyntheticDepthSpec::validate() const {
  std::string bad;
  if (!(max_depth > 0)) bad += " max_depth";
  if (size < 16) bad += " size";
  if (count < 0) bad += " count";
  if (octaves < 1) bad += " octaves";
  if (noise_std < 0) bad += " noise_std";
  if (!bad.empty()) throw ValidationError("invalid depth data spec:" + bad);
}

Dataset gen_segmentation(const SyntheticSegSpec& spec) {
  spec.validate();
  Dataset data;
  data.task = Task::segmentation;
  data.num_classes = spec.num_classes;
  const int n = spec.size;
  const int shape_classes = spec.num_classes - 1;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(item_seed(spec.seed, static_cast<uint64_t>(i)));
    Feature image(3, 1, n, n);
    LabelMap labels(n, n, 0);

    // Desaturated background with a linear brightness ramp.
    const Rgb bg = hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.2), rng.uniform(0.3, 0.7));
    const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double ramp = gx * (x / double(n) - 0.5) + gy * (y / double(n) - 0.5);
        for (int c = 0; c < 3; ++c) image.data(c, image.column(0, y, x)) = bg[c] + ramp;
      }

    const int shapes = spec.shapes_min + rng.index(spec.shapes_max - spec.shapes_min + 1);
    for (int s = 0; s < shapes; ++s) {
      const int cls = 1 + rng.index(shape_classes);
      const int type = (cls - 1) % 3;
      const double hue = (cls - 1) / double(shape_classes) + rng.uniform(-0.06, 0.06);
      const Rgb color = hsv_to_rgb(hue, rng.uniform(0.55, 0.95), rng.uniform(0.5, 0.95));
      const double r = rng.uniform(n / 10.0, n / 4.0);
      const double cx = rng.uniform(0, n), cy = rng.uniform(0, n);
      // Axis-aligned rectangle half extents, or triangle vertices.
      const double hw = r * rng.uniform(0.6, 1.0), hh = r * rng.uniform(0.6, 1.0);
      std::array<double, 6> tri{};
      const double rot = rng.uniform(0, 2 * std::numbers::pi);
      for (int k = 0; k < 3; ++k) {
        const double a = rot + k * 2 * std::numbers::pi / 3 + rng.uniform(-0.3, 0.3);
        tri[2 * k] = cx + 1.2 * r * std::cos(a);
        tri[2 * k + 1] = cy + 1.2 * r * std::sin(a);
      }
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          bool inside = false;
          if (type == 0) {
            inside = std::abs(px - cx) <= hw && std::abs(py - cy) <= hh;
          } else if (type == 1) {
            inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
          } else {
            const double e0 = edge(tri[0], tri[1], tri[2], tri[3], px, py);
            const double e1 = edge(tri[2], tri[3], tri[4], tri[5], px, py);
            const double e2 = edge(tri[4], tri[5], tri[0], tri[1], px, py);
            inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
          }
          if (!inside) continue;
          labels(y, x) = cls;
          for (int c = 0; c < 3; ++c) image.data(c, image.column(0, y, x)) = color[c];
        }
    }
    if (spec.noise_std > 0)
      for (Eigen::Index p = 0; p < image.data.cols(); ++p)
        for (int c = 0; c < 3; ++c) image.data(c, p) += spec.noise_std * rng.normal();
    data.images.push_back(std::move(image));
    data.labels.push_back(std::move(labels));
  }
  return data;
}

namespace {

// Smoothly interpolated lattice noise with `cells` cells across the image.
Grid<double> value_noise(int n, int cells, Rng& rng) {
  Grid<double> lattice(cells + 2, cells + 2);
  for (double& v : lattice.values) v = rng.uniform(-1.0, 1.0);
  Grid<double> out(n, n);
  auto smooth = [](double f) { return f * f * (3 - 2 * f); };
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double u = (x + 0.5) / n * cells, v = (y + 0.5) / n * cells;
      const int i = static_cast<int>(u), j = static_cast<int>(v);
      const double fu = smooth(u - i), fv = smooth(v - j);
      out(y, x) = (1 - fv) * ((1 - fu) * lattice(j, i) + fu * lattice(j, i + 1)) +
                  fv * ((1 - fu) * lattice(j + 1, i) + fu * lattice(j + 1, i + 1));
    }
  return out;
}

}  // namespace

Dataset gen_depth(const SyntheticDepthSpec& spec) {
  spec.validate();
  Dataset data;
  data.task = Task::depth;
  data.max_depth = spec.max_depth;
  const int n = spec.size;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(item_seed(spec.seed, static_cast<uint64_t>(i)));
    Grid<double> height(n, n, 0.0);
    for (int o = 0; o < spec.octaves; ++o) {
      const auto layer = value_noise(n, 3 << o, rng);
      const double amp = std::ldexp(1.0, -o);
      for (size_t p = 0; p < height.size(); ++p) height.values[p] += amp * layer.values[p];
    }
    const auto [lo, hi] = std::minmax_element(height.values.begin(), height.values.end());
    const double lo_v = *lo, span = std::max(*hi - *lo, 1e-12);
    DepthMap depth(n, n);
    for (size_t p = 0; p < depth.size(); ++p)
      depth.values[p] = std::min(spec.max_depth * (0.1 + 0.9 * (height.values[p] - lo_v) / span), spec.max_depth);

    const Rgb albedo = hsv_to_rgb(rng.uniform(), rng.uniform(0.1, 0.4), rng.uniform(0.6, 0.9));
    const Rgb haze{0.75, 0.82, 0.95};
    const double lx = 0.4, ly = 0.5, lz = 0.77;
    Feature image(3, 1, n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dzx = (depth(y, std::min(x + 1, n - 1)) - depth(y, std::max(x - 1, 0))) / spec.max_depth * n / 8;
        const double dzy = (depth(std::min(y + 1, n - 1), x) - depth(std::max(y - 1, 0), x)) / spec.max_depth * n / 8;
        const double norm = std::sqrt(dzx * dzx + dzy * dzy + 1.0);
        const double lambert = std::max(0.2, (-dzx * lx - dzy * ly + lz) / norm);
        const double transmit = std::exp(-1.5 * depth(y, x) / spec.max_depth);
        for (int c = 0; c < 3; ++c)
          image.data(c, image.column(0, y, x)) =
              albedo[c] * lambert * transmit + haze[c] * (1 - transmit) + spec.noise_std * rng.normal();
      }
    data.images.push_back(std::move(image));
    data.depths.push_back(std::move(depth));
  }
  return data;
}

double mean_gradient_magnitude(const DepthMap& depth) {
  double sum = 0;
  size_t count = 0;
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      if (x + 1 < depth.width) {
        sum += std::abs(depth(y, x + 1) - depth(y, x));
        ++count;
      }
      if (y + 1 < depth.height) {
        sum += std::abs(depth(y + 1, x) - depth(y, x));
        ++count;
      }
    }
  return count ? sum / count : 0.0;
}

namespace {

std::string item_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d.ddpa", i);
  return buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "targets");
  for (int i = 0; i < data.size(); ++i) {
    write_array(dir / "images" / item_name(i), to_array(data.images[i], true));
    if (data.task == Task::segmentation)
      write_array(dir / "targets" / item_name(i), to_array(data.labels[i]));
    else
      write_array(dir / "targets" / item_name(i), to_array(data.depths[i]));
  }
  std::ofstream m(dir / "manifest", std::ios::trunc);
  if (!m) throw IoError("cannot write " + (dir / "manifest").string());
  m.precision(17);
  m << "format=ddp-dataset\nversion=1\n"
    << "task=" << to_string(data.task) << "\n"
    << "count=" << data.size() << "\n"
    << "num_classes=" << data.num_classes << "\n"
    << "max_depth=" << data.max_depth << "\n";
  if (!m) throw IoError("write failed: " + (dir / "manifest").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest");
  if (!m) throw IoError("cannot open " + (dir / "manifest").string());
  std::map<std::string, std::string> kv;
  for (std::string line; std::getline(m, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (kv["format"] != "ddp-dataset") throw FormatError("dataset manifest: unexpected format in " + dir.string());
  Dataset data;
  try {
    data.task = task_from_string(kv.at("task"));
    data.num_classes = std::stoi(kv.at("num_classes"));
    data.max_depth = std::stod(kv.at("max_depth"));
    const int count = std::stoi(kv.at("count"));
    for (int i = 0; i < count; ++i) {
      data.images.push_back(feature_from_array(read_array(dir / "images" / item_name(i))));
      const Array target = read_array(dir / "targets" / item_name(i));
      if (data.task == Task::segmentation)
        data.labels.push_back(label_map_from_array(target));
      else
        data.depths.push_back(grid_from_array(target));
    }
  } catch (const std::out_of_range&) {
    throw FormatError("dataset manifest: missing field in " + dir.string());
  } catch (const std::invalid_argument&) {
    throw FormatError("dataset manifest: malformed value in " + dir.string());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
  return data;
}

}  // namespace ddp
