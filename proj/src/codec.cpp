#include "ddp/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ddp {

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

const char* to_string(Encoding e) {
  switch (e) {
    case Encoding::onehot: return "onehot";
    case Encoding::analog_bits: return "analog_bits";
    case Encoding::embedding: return "embedding";
    case Encoding::continuous: return "continuous";
  }
  return "?";
}

Encoding encoding_from_string(const std::string& name) {
  if (name == "onehot") return Encoding::onehot;
  if (name == "analog_bits") return Encoding::analog_bits;
  if (name == "embedding") return Encoding::embedding;
  if (name == "continuous") return Encoding::continuous;
  throw ValidationError("unknown encoding '" + name + "' (expected onehot|analog_bits|embedding|continuous)");
}

int CodecSpec::num_bits() const {
  int b = 0;
  while ((1 << b) < num_classes) ++b;
  return b;
}

int CodecSpec::channels() const {
  switch (strategy) {
    case Encoding::onehot: return num_classes;
    case Encoding::analog_bits: return num_bits();
    case Encoding::embedding: return embed_dim;
    case Encoding::continuous: return 1;
  }
  return 0;
}

void CodecSpec::validate() const {
  std::string bad;
  if (!(scale > 0)) bad += " scale";
  if (discrete() && num_classes < 2) bad += " num_classes";
  if (strategy == Encoding::embedding && embed_dim < 1) bad += " embed_dim";
  if (strategy == Encoding::continuous && !(max_value > 0)) bad += " max_value";
  if (!bad.empty()) throw ValidationError("invalid codec spec:" + bad);
}

Codec::Codec(CodecSpec spec, Matrix table) : spec_(spec) {
  spec_.validate();
  if (spec_.strategy == Encoding::embedding) set_table(std::move(table));
}

void Codec::set_table(Matrix table) {
  require(spec_.strategy == Encoding::embedding, "codec: only the embedding strategy carries a table");
  require(table.rows() == spec_.num_classes && table.cols() == spec_.embed_dim,
          "codec: embedding table must be K x d");
  for (Eigen::Index i = 0; i < table.rows(); ++i)
    for (Eigen::Index j = i + 1; j < table.rows(); ++j)
      require(table.row(i) != table.row(j), "codec: embedding table rows must be pairwise distinct");
  table_ = std::move(table);
  encoded_table_ = table_.unaryExpr([this](double v) { return (2.0 * sigmoid(v) - 1.0) * spec_.scale; });
}

void Codec::check_label(int label) const {
  if (label < 0 || label >= spec_.num_classes)
    throw DomainError("codec: label " + std::to_string(label) + " outside [0, " + std::to_string(spec_.num_classes) + ")");
}

Vector Codec::encode_label(int label) const {
  check_label(label);
  const double s = spec_.scale;
  switch (spec_.strategy) {
    case Encoding::onehot: {
      Vector v = Vector::Constant(spec_.num_classes, -s);
      v(label) = s;
      return v;
    }
    case Encoding::analog_bits: {
      const int b = spec_.num_bits();
      Vector v(b);
      for (int i = 0; i < b; ++i) v(i) = ((label >> (b - 1 - i)) & 1) ? s : -s;  // MSB first
      return v;
    }
    case Encoding::embedding: return encoded_table_.row(label).transpose();
    case Encoding::continuous: break;
  }
  throw ContractError("codec: label encoding requested from a continuous codec");
}

Feature Codec::encode(const LabelMap& labels) const { return encode_batch(std::vector<LabelMap>{labels}); }

Feature Codec::encode(const DepthMap& depth) const { return encode_batch(std::vector<DepthMap>{depth}); }

Feature Codec::encode(const DecodedMap& map) const {
  return std::visit([this](const auto& m) { return encode(m); }, map);
}

Feature Codec::encode_batch(const std::vector<LabelMap>& labels) const {
  require(spec_.discrete(), "codec: label map given to a continuous codec");
  require(!labels.empty(), "codec: empty batch");
  const int h = labels.front().height, w = labels.front().width;
  Feature out(spec_.channels(), static_cast<int>(labels.size()), h, w);
  // Precompute one column per class; encoding is a lookup.
  Matrix lut(spec_.channels(), spec_.num_classes);
  for (int k = 0; k < spec_.num_classes; ++k) lut.col(k) = encode_label(k);
  for (int b = 0; b < out.batch; ++b) {
    require(labels[b].height == h && labels[b].width == w, "codec: batch maps differ in size");
    for (int p = 0; p < h * w; ++p) {
      const int label = labels[b].values[p];
      check_label(label);
      out.data.col(static_cast<Eigen::Index>(b) * h * w + p) = lut.col(label);
    }
  }
  return out;
}

Feature Codec::encode_batch(const std::vector<DepthMap>& depths) const {
  require(spec_.strategy == Encoding::continuous, "codec: depth map given to a discrete codec");
  require(!depths.empty(), "codec: empty batch");
  const int h = depths.front().height, w = depths.front().width;
  Feature out(1, static_cast<int>(depths.size()), h, w);
  for (int b = 0; b < out.batch; ++b) {
    require(depths[b].height == h && depths[b].width == w, "codec: batch maps differ in size");
    for (int p = 0; p < h * w; ++p) {
      const double d = depths[b].values[p];
      if (!(d > 0)) throw DomainError("codec: nonpositive depth " + std::to_string(d));
      const double unit = std::min(d / spec_.max_value, 1.0);
      out.data(0, static_cast<Eigen::Index>(b) * h * w + p) = (2.0 * unit - 1.0) * spec_.scale;
    }
  }
  return out;
}

LabelMap Codec::decode_labels(const Feature& logits) const {
  require(logits.batch == 1, "codec: decode expects a batch of one");
  require(logits.channels() == spec_.num_classes,
          "codec: expected " + std::to_string(spec_.num_classes) + " logit channels, got " + std::to_string(logits.channels()));
  LabelMap out(logits.height, logits.width);
  for (Eigen::Index p = 0; p < logits.data.cols(); ++p) {
    Eigen::Index best = 0;
    logits.data.col(p).maxCoeff(&best);  // first maximum wins
    out.values[p] = static_cast<int32_t>(best);
  }
  return out;
}

DepthMap Codec::decode_depth(const Feature& prediction) const {
  require(prediction.batch == 1, "codec: decode expects a batch of one");
  require(prediction.channels() == 1, "codec: depth prediction must have one channel");
  DepthMap out(prediction.height, prediction.width);
  const double floor = std::numeric_limits<double>::min();
  for (Eigen::Index p = 0; p < prediction.data.cols(); ++p)
    out.values[p] = std::clamp(prediction.data(0, p), floor, 1.0) * spec_.max_value;
  return out;
}

DecodedMap Codec::decode(const Feature& prediction) const {
  if (spec_.discrete()) return decode_labels(prediction);
  return decode_depth(prediction);
}

int Codec::nearest_label(const Vector& v) const {
  require(v.size() == spec_.channels(), "codec: vector length does not match channel count");
  switch (spec_.strategy) {
    case Encoding::onehot: {
      Eigen::Index best = 0;
      v.maxCoeff(&best);
      return static_cast<int>(best);
    }
    case Encoding::analog_bits: {
      int label = 0;
      for (int i = 0; i < v.size(); ++i) label = (label << 1) | (v(i) > 0 ? 1 : 0);
      return std::min(label, spec_.num_classes - 1);
    }
    case Encoding::embedding: {
      Eigen::Index best = 0;
      (encoded_table_.rowwise() - v.transpose()).rowwise().squaredNorm().minCoeff(&best);
      return static_cast<int>(best);
    }
    case Encoding::continuous: break;
  }
  throw ContractError("codec: nearest_label on a continuous codec");
}

int Codec::roundtrip_label(int label) const {
  require(spec_.discrete(), "codec: roundtrip_label needs a discrete strategy");
  return nearest_label(encode_label(label));
}

void Codec::accumulate_table_grad(const std::vector<LabelMap>& labels, const Matrix& d_encoded, Matrix& grad) const {
  require(spec_.strategy == Encoding::embedding, "codec: no table to differentiate");
  require(grad.rows() == table_.rows() && grad.cols() == table_.cols(), "codec: gradient shape mismatch");
  // d/dv [(2σ(v) - 1) s] = 2 s σ(v)(1 - σ(v))
  const Matrix local = table_.unaryExpr([this](double v) {
    const double sg = sigmoid(v);
    return 2.0 * spec_.scale * sg * (1.0 - sg);
  });
  Eigen::Index col = 0;
  for (const auto& m : labels)
    for (int label : m.values) grad.row(label) += d_encoded.col(col++).transpose().cwiseProduct(local.row(label));
  require(col == d_encoded.cols(), "codec: gradient column count mismatch");
}

Matrix Codec::random_table(int num_classes, int embed_dim, Rng& rng) {
  return rng.normal_matrix(num_classes, embed_dim);
}

}  // namespace ddp
