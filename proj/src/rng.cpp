#include "ddp/rng.hpp"

#include <sstream>

#include "ddp/errors.hpp"

namespace ddp {

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  // Fill column-major so the draw order is independent of Eigen internals.
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal();
  return m;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << engine_ << ' ' << uniform_ << ' ' << normal_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> uniform_ >> normal_;
  if (!is) throw FormatError("rng: malformed state string");
}

}  // namespace ddp
