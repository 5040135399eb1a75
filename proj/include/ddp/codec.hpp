#pragma once

#include <string>
#include <variant>
#include <vector>

#include "ddp/rng.hpp"
#include "ddp/tensor.hpp"

namespace ddp {

enum class Encoding { onehot, analog_bits, embedding, continuous };

const char* to_string(Encoding e);
Encoding encoding_from_string(const std::string& name);

struct CodecSpec {
  Encoding strategy = Encoding::embedding;
  int num_classes = 4;     // K, discrete strategies
  int embed_dim = 16;      // d, embedding
  double scale = 0.01;
  double max_value = 10.0; // continuous only, e.g. meters

  bool discrete() const { return strategy != Encoding::continuous; }
  /// b = ceil(log2 K).
  int num_bits() const;
  /// Channel count of an encoded map.
  int channels() const;
  void validate() const;
};

/// A decoded prediction: a label map for segmentation or a depth map for regression.
using DecodedMap = std::variant<LabelMap, DepthMap>;

/// Bidirectional map between ground-truth maps and continuous signals in [-scale, +scale].
///
/// The embedding strategy carries a K x d table; the codec holds an immutable
/// snapshot of it, refreshed by the trainer after each update.
class Codec {
 public:
  explicit Codec(CodecSpec spec, Matrix table = {});

  const CodecSpec& spec() const { return spec_; }
  const Matrix& table() const { return table_; }
  void set_table(Matrix table);

  Feature encode(const LabelMap& labels) const;
  Feature encode(const DepthMap& depth) const;
  Feature encode(const DecodedMap& map) const;
  /// Batch of equally sized maps.
  Feature encode_batch(const std::vector<LabelMap>& labels) const;
  Feature encode_batch(const std::vector<DepthMap>& depths) const;

  /// Per-pixel argmax over K logits, lowest index on ties. Batch of one.
  LabelMap decode_labels(const Feature& logits) const;
  /// Normalized depth clamped to (0, 1] and scaled by max_value. Batch of one.
  DepthMap decode_depth(const Feature& prediction) const;
  DecodedMap decode(const Feature& prediction) const;

  /// Recovers a label from its own encoding: sign threshold for onehot and
  /// analog bits, nearest encoded table row for embeddings.
  int roundtrip_label(int label) const;
  /// Label whose encoding is closest to the encoded vector `v` (length = channels()).
  int nearest_label(const Vector& v) const;

  /// Adds d(loss)/d(table) given d(loss)/d(encoded) for the labels that produced the encoding.
  void accumulate_table_grad(const std::vector<LabelMap>& labels, const Matrix& d_encoded, Matrix& grad) const;

  /// Unit-Gaussian K x d table.
  static Matrix random_table(int num_classes, int embed_dim, Rng& rng);

 private:
  Vector encode_label(int label) const;
  void check_label(int label) const;

  CodecSpec spec_;
  Matrix table_;
  Matrix encoded_table_;  // K x d, rows already squashed and scaled
};

}  // namespace ddp
