#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ddp/tensor.hpp"

namespace ddp {

/// Seeded generator whose complete state (engine and cached normal deviate)
/// round-trips through a string, so training can resume bit-exactly.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return uniform_(engine_); }
  double normal() { return normal_(engine_); }
  uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  int index(int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(engine_)); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return serialize() == other.serialize(); }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ddp
