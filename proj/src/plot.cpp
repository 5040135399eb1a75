#include "ddp/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include "ddp/array_io.hpp"

namespace ddp {

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + image.size() * 3);
  for (const Rgb& p : image.values) bytes.insert(bytes.end(), p.begin(), p.end());
  write_file(path, bytes);
}

RgbImage label_palette_image(const LabelMap& labels) {
  static constexpr Rgb kPalette[] = {{0, 0, 0},       {230, 25, 75},  {60, 180, 75},   {255, 225, 25},
                                     {0, 130, 200},   {245, 130, 48}, {145, 30, 180},  {70, 240, 240},
                                     {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128},
                                     {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0}};
  constexpr int n = sizeof(kPalette) / sizeof(kPalette[0]);
  RgbImage img(labels.height, labels.width);
  for (size_t p = 0; p < labels.size(); ++p) {
    const int l = labels.values[p];
    if (l < n) {
      img.values[p] = kPalette[std::max(l, 0)];
    } else {
      // Beyond the table: a deterministic hash color.
      const uint32_t h = static_cast<uint32_t>(l) * 2654435761u;
      img.values[p] = {static_cast<uint8_t>(h >> 24), static_cast<uint8_t>(h >> 16), static_cast<uint8_t>(h >> 8)};
    }
  }
  return img;
}

RgbImage depth_image(const DepthMap& depth, double max_depth) {
  require(max_depth > 0, "depth image: max_depth must be positive");
  RgbImage img(depth.height, depth.width);
  for (size_t p = 0; p < depth.size(); ++p) {
    const double v = std::clamp(depth.values[p] / max_depth, 0.0, 1.0);
    img.values[p] = {static_cast<uint8_t>(std::lround(255 * v)), static_cast<uint8_t>(std::lround(200 * v)),
                     static_cast<uint8_t>(std::lround(255 * (1 - v)))};
  }
  return img;
}

RgbImage uncertainty_overlay(const Grid<double>& uncertainty, const Grid<uint8_t>* errors, int zoom) {
  require(zoom >= 1, "overlay: zoom must be >= 1");
  require(!errors || (errors->height == uncertainty.height && errors->width == uncertainty.width),
          "overlay: error mask shape mismatch");
  RgbImage img(uncertainty.height * zoom, uncertainty.width * zoom);
  for (int y = 0; y < uncertainty.height; ++y)
    for (int x = 0; x < uncertainty.width; ++x) {
      const auto g = static_cast<uint8_t>(std::lround(255 * std::clamp(uncertainty(y, x), 0.0, 1.0)));
      Rgb c{g, g, g};
      if (errors && (*errors)(y, x)) c = {255, static_cast<uint8_t>(g / 2), static_cast<uint8_t>(g / 2)};
      for (int dy = 0; dy < zoom; ++dy)
        for (int dx = 0; dx < zoom; ++dx) img(y * zoom + dy, x * zoom + dx) = c;
    }
  return img;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string steps_curve_svg(const nlohmann::json& table) {
  std::vector<std::pair<double, double>> points;
  std::string metric;
  try {
    if (table.at("axis").get<std::string>() != "steps") throw FormatError("steps curve: table axis is not 'steps'");
    metric = table.at("metric").get<std::string>();
    for (const auto& row : table.at("rows")) {
      const auto& v = row.at("value");
      const double x = v.is_string() ? std::stod(v.get<std::string>()) : v.get<double>();
      points.emplace_back(x, row.at("primary").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("steps curve: malformed table: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("steps curve: non-numeric step value");
  }
  if (points.empty()) throw FormatError("steps curve: table has no rows");
  std::sort(points.begin(), points.end());

  constexpr double W = 480, H = 320, L = 60, R = 20, T = 30, B = 50;
  double x0 = points.front().first, x1 = points.back().first;
  double y0 = points.front().second, y1 = y0;
  for (const auto& p : points) {
    y0 = std::min(y0, p.second);
    y1 = std::max(y1, p.second);
  }
  if (x1 == x0) x1 = x0 + 1;
  const double pad = std::max((y1 - y0) * 0.1, 1e-3);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << (W + L - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">sampling steps</text>\n";
  s << "<text x=\"16\" y=\"" << (H - B + T) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (H - B + T) / 2
    << ")\">" << metric << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = y0 + (y1 - y0) * i / 4;
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
  }
  s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (size_t i = 0; i < points.size(); ++i) s << (i ? " " : "") << fmt(px(points[i].first)) << "," << fmt(py(points[i].second));
  s << "\"/>\n";
  for (const auto& [x, y] : points) {
    s << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    s << "<text x=\"" << fmt(px(x)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fmt(x) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace ddp
