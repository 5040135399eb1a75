#pragma once

#include <string>
#include <vector>

#include "ddp/rng.hpp"
#include "ddp/tensor.hpp"

namespace ddp::nn {

struct Param {
  std::string name;
  Matrix value;
};

/// Ordered, named parameter tensors. Order is the registration order and is
/// the serialization order.
class Parameters {
 public:
  int add(std::string name, Matrix value);
  int find(const std::string& name) const;  // -1 when absent

  Matrix& operator[](int i) { return params_[i].value; }
  const Matrix& operator[](int i) const { return params_[i].value; }
  const Param& param(int i) const { return params_[i]; }
  int size() const { return static_cast<int>(params_.size()); }
  size_t scalar_count() const;

  /// Zero tensors shaped like each parameter.
  std::vector<Matrix> zeros_like() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
};

using Gradients = std::vector<Matrix>;

/// Fan-in scaled Gaussian, std = gain / sqrt(fan_in).
Matrix fan_in_init(int rows, int cols, int fan_in, Rng& rng, double gain = 1.0);

double gelu(double x);
double gelu_grad(double x);
Matrix gelu(const Matrix& x);
/// dy ⊙ gelu'(x)
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

/// Per-pixel affine map over channels (a 1x1 convolution).
struct Pointwise {
  int weight = -1, bias = -1;
  int in = 0, out = 0;

  static Pointwise create(Parameters& p, const std::string& name, int in, int out, Rng& rng, double gain = 1.0);
  Matrix forward(const Parameters& p, const Matrix& x) const;
  /// Accumulates weight/bias gradients; returns dL/dx.
  Matrix backward(const Parameters& p, const Matrix& x, const Matrix& dy, Gradients& g) const;
};

/// 3x3 convolution with zero padding 1 and stride 1 or 2, via im2col.
struct Conv3x3 {
  int weight = -1, bias = -1;
  int in = 0, out = 0, stride = 1;

  static Conv3x3 create(Parameters& p, const std::string& name, int in, int out, int stride, Rng& rng);
  int out_size(int n) const { return (n - 1) / stride + 1; }
  /// `cols` receives the im2col matrix needed by backward.
  Feature forward(const Parameters& p, const Feature& x, Matrix& cols) const;
  Feature backward(const Parameters& p, const Feature& x, const Matrix& cols, const Feature& dy, Gradients& g) const;

 private:
  Matrix im2col(const Feature& x, int oh, int ow) const;
};

/// Per-channel 3x3 convolution, stride 1, zero padding 1.
struct Depthwise3x3 {
  int weight = -1, bias = -1;
  int channels = 0;

  static Depthwise3x3 create(Parameters& p, const std::string& name, int channels, Rng& rng);
  Feature forward(const Parameters& p, const Feature& x) const;
  Feature backward(const Parameters& p, const Feature& x, const Feature& dy, Gradients& g) const;
};

/// Normalization over the channels of each pixel, with learned gain and bias.
struct ChannelNorm {
  int gain = -1, bias = -1;
  int channels = 0;
  static constexpr double eps = 1e-5;

  struct Cache {
    Matrix normalized;  // x̂
    Eigen::RowVectorXd inv_std;
  };

  static ChannelNorm create(Parameters& p, const std::string& name, int channels);
  Matrix forward(const Parameters& p, const Matrix& x, Cache* cache) const;
  Matrix backward(const Parameters& p, const Cache& cache, const Matrix& dy, Gradients& g) const;
};

/// Nearest-neighbour 2x upsampling cropped to a target size.
Feature upsample2x(const Feature& x, int out_h, int out_w);
Feature upsample2x_backward(const Feature& dy, int in_h, int in_w);

/// Sinusoidal features of t ∈ [0,1], one column per entry of `t`.
Matrix time_embedding(const std::vector<double>& t, int dim);

/// Adds a per-item column vector to every pixel of that item.
void add_per_item(Feature& x, const Matrix& per_item);
/// Sums a per-pixel gradient back to one column per item.
Matrix sum_per_item(const Feature& dy);

}  // namespace ddp::nn
