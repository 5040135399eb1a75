#include "ddp/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace ddp {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'P', 'A'};

template <typename U>
void put_le(std::vector<uint8_t>& out, U v) {
  for (size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const uint8_t* p) {
  U v = 0;
  for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::vector<uint64_t> checked_shape(std::vector<uint64_t> shape, size_t n) {
  if (shape.size() > Array::kMaxRank) throw ContractError("array: rank above 4");
  size_t count = 1;
  for (auto d : shape) count *= d;
  if (count != n) throw ContractError("array: shape does not match element count");
  return shape;
}

}  // namespace

size_t dtype_size(DType t) {
  switch (t) {
    case DType::u8: return 1;
    case DType::i32: return 4;
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  throw FormatError("array: unknown dtype code");
}

const char* to_string(DType t) {
  switch (t) {
    case DType::u8: return "u8";
    case DType::i32: return "i32";
    case DType::f32: return "f32";
    case DType::f64: return "f64";
  }
  return "?";
}

size_t Array::element_count() const {
  size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Array Array::from_f64(std::vector<uint64_t> shape, std::span<const double> values) {
  Array a{DType::f64, checked_shape(std::move(shape), values.size()), {}};
  a.payload.reserve(values.size() * 8);
  for (double v : values) put_le(a.payload, std::bit_cast<uint64_t>(v));
  return a;
}

Array Array::from_f32(std::vector<uint64_t> shape, std::span<const double> values) {
  Array a{DType::f32, checked_shape(std::move(shape), values.size()), {}};
  a.payload.reserve(values.size() * 4);
  for (double v : values) put_le(a.payload, std::bit_cast<uint32_t>(static_cast<float>(v)));
  return a;
}

Array Array::from_u8(std::vector<uint64_t> shape, std::span<const uint8_t> values) {
  return {DType::u8, checked_shape(std::move(shape), values.size()), {values.begin(), values.end()}};
}

Array Array::from_i32(std::vector<uint64_t> shape, std::span<const int32_t> values) {
  Array a{DType::i32, checked_shape(std::move(shape), values.size()), {}};
  a.payload.reserve(values.size() * 4);
  for (int32_t v : values) put_le(a.payload, static_cast<uint32_t>(v));
  return a;
}

std::vector<double> Array::to_f64() const {
  const size_t n = element_count();
  std::vector<double> out(n);
  const uint8_t* p = payload.data();
  for (size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::u8: out[i] = p[i]; break;
      case DType::i32: out[i] = static_cast<int32_t>(get_le<uint32_t>(p + 4 * i)); break;
      case DType::f32: out[i] = std::bit_cast<float>(get_le<uint32_t>(p + 4 * i)); break;
      case DType::f64: out[i] = std::bit_cast<double>(get_le<uint64_t>(p + 8 * i)); break;
    }
  }
  return out;
}

std::vector<int32_t> Array::to_i32() const {
  if (dtype != DType::u8 && dtype != DType::i32) throw FormatError("array: expected an integer dtype");
  const size_t n = element_count();
  std::vector<int32_t> out(n);
  for (size_t i = 0; i < n; ++i)
    out[i] = dtype == DType::u8 ? payload[i] : static_cast<int32_t>(get_le<uint32_t>(payload.data() + 4 * i));
  return out;
}

std::vector<uint8_t> encode_array(const Array& a) {
  if (a.shape.size() > Array::kMaxRank) throw ContractError("array: rank above 4");
  if (a.payload.size() != a.element_count() * dtype_size(a.dtype)) throw ContractError("array: payload size mismatch");
  std::vector<uint8_t> out;
  out.reserve(Array::header_size(a.shape.size()) + a.payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le(out, Array::kVersion);
  out.push_back(static_cast<uint8_t>(a.dtype));
  out.push_back(static_cast<uint8_t>(a.shape.size()));
  for (auto d : a.shape) put_le(out, d);
  out.insert(out.end(), a.payload.begin(), a.payload.end());
  return out;
}

Array decode_array(std::span<const uint8_t> bytes, size_t* consumed) {
  if (bytes.size() < Array::header_size(0)) throw FormatError("array: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("array: bad magic");
  const auto version = get_le<uint16_t>(bytes.data() + 4);
  if (version != Array::kVersion) throw FormatError("array: unsupported version " + std::to_string(version));
  const uint8_t code = bytes[6];
  if (code > static_cast<uint8_t>(DType::f64)) throw FormatError("array: unknown dtype code " + std::to_string(code));
  Array a;
  a.dtype = static_cast<DType>(code);
  const size_t rank = bytes[7];
  if (rank > Array::kMaxRank) throw FormatError("array: rank above 4");
  const size_t header = Array::header_size(rank);
  if (bytes.size() < header) throw FormatError("array: truncated header");
  size_t count = 1;
  for (size_t i = 0; i < rank; ++i) {
    const uint64_t d = get_le<uint64_t>(bytes.data() + 8 + 8 * i);
    if (d != 0 && count > std::numeric_limits<size_t>::max() / d) throw FormatError("array: dims overflow");
    a.shape.push_back(d);
    count *= d;
  }
  const size_t body = count * dtype_size(a.dtype);
  if (bytes.size() - header < body) throw FormatError("array: truncated payload");
  a.payload.assign(bytes.begin() + header, bytes.begin() + header + body);
  if (consumed) *consumed = header + body;
  return a;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_array(const std::filesystem::path& path, const Array& a) { write_file(path, encode_array(a)); }

Array read_array(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  size_t used = 0;
  Array a = decode_array(bytes, &used);
  if (used != bytes.size()) throw FormatError("array: trailing bytes in " + path.string());
  return a;
}

Array to_array(const Matrix& m) {
  std::vector<double> v(static_cast<size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
  return Array::from_f64({static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())}, v);
}

Matrix matrix_from_array(const Array& a) {
  if (a.shape.size() != 2) throw FormatError("array: expected rank 2");
  const auto v = a.to_f64();
  Matrix m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v[static_cast<size_t>(r * m.cols() + c)];
  return m;
}

Array to_array(const Feature& f, bool single) {
  require(f.batch == 1, "array: feature must be a single item");
  std::vector<double> v(static_cast<size_t>(f.data.size()));
  size_t i = 0;
  for (Eigen::Index c = 0; c < f.data.rows(); ++c)
    for (Eigen::Index p = 0; p < f.data.cols(); ++p) v[i++] = f.data(c, p);
  std::vector<uint64_t> shape{static_cast<uint64_t>(f.channels()), static_cast<uint64_t>(f.height),
                              static_cast<uint64_t>(f.width)};
  return single ? Array::from_f32(std::move(shape), v) : Array::from_f64(std::move(shape), v);
}

Feature feature_from_array(const Array& a) {
  if (a.shape.size() != 3) throw FormatError("array: expected a C x H x W feature");
  const auto v = a.to_f64();
  Feature f(static_cast<int>(a.shape[0]), 1, static_cast<int>(a.shape[1]), static_cast<int>(a.shape[2]));
  size_t i = 0;
  for (Eigen::Index c = 0; c < f.data.rows(); ++c)
    for (Eigen::Index p = 0; p < f.data.cols(); ++p) f.data(c, p) = v[i++];
  return f;
}

Array to_array(const LabelMap& m) {
  const std::vector<uint64_t> shape{static_cast<uint64_t>(m.height), static_cast<uint64_t>(m.width)};
  bool fits = true;
  for (int32_t v : m.values) fits = fits && v >= 0 && v <= 255;
  if (!fits) return Array::from_i32(shape, m.values);
  std::vector<uint8_t> bytes(m.values.begin(), m.values.end());
  return Array::from_u8(shape, bytes);
}

LabelMap label_map_from_array(const Array& a) {
  if (a.shape.size() != 2) throw FormatError("array: expected an H x W label map");
  LabelMap m(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]));
  m.values = a.to_i32();
  return m;
}

Array to_array(const Grid<double>& m) {
  return Array::from_f64({static_cast<uint64_t>(m.height), static_cast<uint64_t>(m.width)}, m.values);
}

Grid<double> grid_from_array(const Array& a) {
  if (a.shape.size() != 2) throw FormatError("array: expected an H x W grid");
  Grid<double> m(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]));
  m.values = a.to_f64();
  return m;
}

}  // namespace ddp
