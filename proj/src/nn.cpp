#include "ddp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ddp::nn {

int Parameters::add(std::string name, Matrix value) {
  require(find(name) < 0, "parameters: duplicate name " + name);
  params_.push_back({std::move(name), std::move(value)});
  return size() - 1;
}

int Parameters::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (params_[i].name == name) return i;
  return -1;
}

size_t Parameters::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
  return n;
}

std::vector<Matrix> Parameters::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return out;
}

Matrix fan_in_init(int rows, int cols, int fan_in, Rng& rng, double gain) {
  return rng.normal_matrix(rows, cols) * (gain / std::sqrt(static_cast<double>(fan_in)));
}

namespace {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

}  // namespace

// Tanh form of GELU; tanh(u) is written as 1 - 2 / (exp(2u) + 1) so the
// matrix versions vectorize.
double gelu(double x) {
  const double th = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
  return 0.5 * x * (1.0 + th);
}

double gelu_grad(double x) {
  const double th = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

namespace {

Eigen::ArrayXXd gelu_tanh(const Matrix& x) {
  const auto a = x.array();
  return 1.0 - 2.0 / ((2.0 * kGeluScale * (a + kGeluCubic * a.cube())).exp() + 1.0);
}

}  // namespace

Matrix gelu(const Matrix& x) { return (0.5 * x.array() * (1.0 + gelu_tanh(x))).matrix(); }

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  const Eigen::ArrayXXd th = gelu_tanh(x);
  const auto a = x.array();
  return (dy.array() * (0.5 * (1.0 + th) +
                        0.5 * a * (1.0 - th.square()) * kGeluScale * (1.0 + 3.0 * kGeluCubic * a.square())))
      .matrix();
}

// --- Pointwise -------------------------------------------------------------

Pointwise Pointwise::create(Parameters& p, const std::string& name, int in, int out, Rng& rng, double gain) {
  Pointwise l;
  l.in = in;
  l.out = out;
  l.weight = p.add(name + ".weight", gain == 0.0 ? Matrix::Zero(out, in) : fan_in_init(out, in, in, rng, gain));
  l.bias = p.add(name + ".bias", Matrix::Zero(out, 1));
  return l;
}

Matrix Pointwise::forward(const Parameters& p, const Matrix& x) const {
  require(x.rows() == in, "pointwise: channel mismatch");
  Matrix y = p[weight] * x;
  y.colwise() += p[bias].col(0);
  return y;
}

Matrix Pointwise::backward(const Parameters& p, const Matrix& x, const Matrix& dy, Gradients& g) const {
  g[weight].noalias() += dy * x.transpose();
  g[bias].col(0) += dy.rowwise().sum();
  return p[weight].transpose() * dy;
}

// --- Conv3x3 ---------------------------------------------------------------

Conv3x3 Conv3x3::create(Parameters& p, const std::string& name, int in, int out, int stride, Rng& rng) {
  Conv3x3 l;
  l.in = in;
  l.out = out;
  l.stride = stride;
  l.weight = p.add(name + ".weight", fan_in_init(out, 9 * in, 9 * in, rng, std::numbers::sqrt2));
  l.bias = p.add(name + ".bias", Matrix::Zero(out, 1));
  return l;
}

// Row (k * in + c) of the column matrix holds channel c at tap k = ky * 3 + kx.
Matrix Conv3x3::im2col(const Feature& x, int oh, int ow) const {
  Matrix cols = Matrix::Zero(9 * in, static_cast<Eigen::Index>(x.batch) * oh * ow);
  const double* src = x.data.data();
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double* dst = cols.col((static_cast<Eigen::Index>(b) * oh + oy) * ow + ox).data();
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= x.width) continue;
            const double* s = src + x.column(b, iy, ix) * in;
            std::copy(s, s + in, dst + (ky * 3 + kx) * in);
          }
        }
      }
  return cols;
}

Feature Conv3x3::forward(const Parameters& p, const Feature& x, Matrix& cols) const {
  require(x.channels() == in, "conv3x3: channel mismatch");
  const int oh = out_size(x.height), ow = out_size(x.width);
  cols = im2col(x, oh, ow);
  Feature y;
  y.batch = x.batch;
  y.height = oh;
  y.width = ow;
  y.data.noalias() = p[weight] * cols;
  y.data.colwise() += p[bias].col(0);
  return y;
}

Feature Conv3x3::backward(const Parameters& p, const Feature& x, const Matrix& cols, const Feature& dy,
                          Gradients& g) const {
  g[weight].noalias() += dy.data * cols.transpose();
  g[bias].col(0) += dy.data.rowwise().sum();
  const Matrix dcols = p[weight].transpose() * dy.data;
  Feature dx(in, x.batch, x.height, x.width);
  double* dst = dx.data.data();
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < dy.height; ++oy)
      for (int ox = 0; ox < dy.width; ++ox) {
        const double* src = dcols.col(dy.column(b, oy, ox)).data();
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= x.width) continue;
            double* d = dst + x.column(b, iy, ix) * in;
            const double* s = src + (ky * 3 + kx) * in;
            for (int c = 0; c < in; ++c) d[c] += s[c];
          }
        }
      }
  return dx;
}

// --- Depthwise3x3 ----------------------------------------------------------

Depthwise3x3 Depthwise3x3::create(Parameters& p, const std::string& name, int channels, Rng& rng) {
  Depthwise3x3 l;
  l.channels = channels;
  l.weight = p.add(name + ".weight", fan_in_init(channels, 9, 9, rng));
  l.bias = p.add(name + ".bias", Matrix::Zero(channels, 1));
  return l;
}

Feature Depthwise3x3::forward(const Parameters& p, const Feature& x) const {
  require(x.channels() == channels, "depthwise: channel mismatch");
  Feature y(channels, x.batch, x.height, x.width);
  y.data.colwise() = p[bias].col(0);
  const Matrix& w = p[weight];
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < x.height; ++oy)
      for (int ox = 0; ox < x.width; ++ox) {
        auto out = y.data.col(y.column(b, oy, ox));
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy + ky - 1;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox + kx - 1;
            if (ix < 0 || ix >= x.width) continue;
            out += w.col(ky * 3 + kx).cwiseProduct(x.data.col(x.column(b, iy, ix)));
          }
        }
      }
  return y;
}

Feature Depthwise3x3::backward(const Parameters& p, const Feature& x, const Feature& dy, Gradients& g) const {
  Feature dx(channels, x.batch, x.height, x.width);
  const Matrix& w = p[weight];
  Matrix& gw = g[weight];
  g[bias].col(0) += dy.data.rowwise().sum();
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < x.height; ++oy)
      for (int ox = 0; ox < x.width; ++ox) {
        const auto d = dy.data.col(dy.column(b, oy, ox));
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy + ky - 1;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox + kx - 1;
            if (ix < 0 || ix >= x.width) continue;
            const Eigen::Index src = x.column(b, iy, ix);
            gw.col(ky * 3 + kx) += d.cwiseProduct(x.data.col(src));
            dx.data.col(src) += d.cwiseProduct(w.col(ky * 3 + kx));
          }
        }
      }
  return dx;
}

// --- ChannelNorm -----------------------------------------------------------

ChannelNorm ChannelNorm::create(Parameters& p, const std::string& name, int channels) {
  ChannelNorm l;
  l.channels = channels;
  l.gain = p.add(name + ".gain", Matrix::Ones(channels, 1));
  l.bias = p.add(name + ".bias", Matrix::Zero(channels, 1));
  return l;
}

Matrix ChannelNorm::forward(const Parameters& p, const Matrix& x, Cache* cache) const {
  require(x.rows() == channels, "channel norm: channel mismatch");
  const double n = static_cast<double>(channels);
  const Eigen::RowVectorXd mean = x.colwise().sum() / n;
  Matrix centered = x.rowwise() - mean;
  const Eigen::RowVectorXd inv_std =
      ((centered.array().square().colwise().sum() / n) + eps).rsqrt().matrix();
  centered.array().rowwise() *= inv_std.array();
  Matrix y = centered.array().colwise() * p[gain].col(0).array();
  y.colwise() += p[bias].col(0);
  if (cache) {
    cache->normalized = std::move(centered);
    cache->inv_std = inv_std;
  }
  return y;
}

Matrix ChannelNorm::backward(const Parameters& p, const Cache& cache, const Matrix& dy, Gradients& g) const {
  const Matrix& xhat = cache.normalized;
  g[gain].col(0) += dy.cwiseProduct(xhat).rowwise().sum();
  g[bias].col(0) += dy.rowwise().sum();
  const Matrix dxhat = dy.array().colwise() * p[gain].col(0).array();
  const double n = static_cast<double>(channels);
  const Eigen::RowVectorXd mean_d = dxhat.colwise().sum() / n;
  const Eigen::RowVectorXd mean_dx = dxhat.cwiseProduct(xhat).colwise().sum() / n;
  Matrix dx = dxhat;
  dx.rowwise() -= mean_d;
  dx -= (xhat.array().rowwise() * mean_dx.array()).matrix();
  dx.array().rowwise() *= cache.inv_std.array();
  return dx;
}

// --- resampling and time ---------------------------------------------------

Feature upsample2x(const Feature& x, int out_h, int out_w) {
  require(out_h <= 2 * x.height && out_w <= 2 * x.width, "upsample2x: target too large");
  Feature y(x.channels(), x.batch, out_h, out_w);
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) y.data.col(y.column(b, oy, ox)) = x.data.col(x.column(b, oy / 2, ox / 2));
  return y;
}

Feature upsample2x_backward(const Feature& dy, int in_h, int in_w) {
  Feature dx(dy.channels(), dy.batch, in_h, in_w);
  for (int b = 0; b < dy.batch; ++b)
    for (int oy = 0; oy < dy.height; ++oy)
      for (int ox = 0; ox < dy.width; ++ox) dx.data.col(dx.column(b, oy / 2, ox / 2)) += dy.data.col(dy.column(b, oy, ox));
  return dx;
}

Matrix time_embedding(const std::vector<double>& t, int dim) {
  require(dim >= 2 && dim % 2 == 0, "time embedding dimension must be even");
  const int half = dim / 2;
  Matrix out(dim, static_cast<Eigen::Index>(t.size()));
  for (size_t j = 0; j < t.size(); ++j)
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double arg = 1000.0 * t[j] * freq;
      out(k, j) = std::sin(arg);
      out(half + k, j) = std::cos(arg);
    }
  return out;
}

void add_per_item(Feature& x, const Matrix& per_item) {
  require(per_item.cols() == x.batch && per_item.rows() == x.channels(), "add_per_item: shape mismatch");
  for (int b = 0; b < x.batch; ++b) x.item(b).colwise() += per_item.col(b);
}

Matrix sum_per_item(const Feature& dy) {
  Matrix out(dy.channels(), dy.batch);
  for (int b = 0; b < dy.batch; ++b) out.col(b) = dy.item(b).rowwise().sum();
  return out;
}

}  // namespace ddp::nn
