#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ddp/tensor.hpp"

namespace ddp {

enum class DType : uint8_t { u8 = 0, i32 = 1, f32 = 2, f64 = 3 };

size_t dtype_size(DType t);
const char* to_string(DType t);

/// Self-describing little-endian row-major array of rank <= 4.
///
/// Layout: "DDPA" | version u16 | dtype u8 | rank u8 | rank x u64 dims | payload.
struct Array {
  static constexpr uint16_t kVersion = 1;
  static constexpr size_t kMaxRank = 4;

  DType dtype = DType::f64;
  std::vector<uint64_t> shape;
  std::vector<uint8_t> payload;  // little-endian element bytes

  size_t element_count() const;
  static size_t header_size(size_t rank) { return 4 + 2 + 1 + 1 + 8 * rank; }

  static Array from_f64(std::vector<uint64_t> shape, std::span<const double> values);
  static Array from_f32(std::vector<uint64_t> shape, std::span<const double> values);
  static Array from_u8(std::vector<uint64_t> shape, std::span<const uint8_t> values);
  static Array from_i32(std::vector<uint64_t> shape, std::span<const int32_t> values);

  /// Element values widened to double regardless of dtype.
  std::vector<double> to_f64() const;
  std::vector<int32_t> to_i32() const;

  bool operator==(const Array&) const = default;
};

std::vector<uint8_t> encode_array(const Array& a);
/// Decodes one array starting at `bytes`; `consumed` receives its encoded length.
Array decode_array(std::span<const uint8_t> bytes, size_t* consumed = nullptr);

void write_array(const std::filesystem::path& path, const Array& a);
Array read_array(const std::filesystem::path& path);

// Conversions between arrays and in-memory maps.
Array to_array(const Matrix& m);  // rank-2 f64, row-major
Matrix matrix_from_array(const Array& a);
/// Single-item feature as C x H x W (f64, or f32 when `single` is true).
Array to_array(const Feature& f, bool single = false);
Feature feature_from_array(const Array& a);
/// u8 when every label fits, i32 otherwise.
Array to_array(const LabelMap& m);
LabelMap label_map_from_array(const Array& a);
Array to_array(const Grid<double>& m);
Grid<double> grid_from_array(const Array& a);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);

}  // namespace ddp
