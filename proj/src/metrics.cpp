#include "ddp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ddp {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes), counts_(static_cast<size_t>(num_classes) * num_classes, 0) {
  require(num_classes >= 1, "confusion matrix: need at least one class");
}

void ConfusionMatrix::add(const LabelMap& gt, const LabelMap& pred, int ignore_index) {
  require(gt.height == pred.height && gt.width == pred.width, "confusion matrix: shape mismatch");
  for (size_t p = 0; p < gt.size(); ++p) {
    const int g = gt.values[p];
    if (g == ignore_index) continue;
    const int q = pred.values[p];
    require(g >= 0 && g < k_ && q >= 0 && q < k_, "confusion matrix: label out of range");
    ++counts_[static_cast<size_t>(g) * k_ + q];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  require(other.k_ == k_, "confusion matrix: class count mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), uint64_t{0}); }

IouResult miou(const ConfusionMatrix& cm) {
  require(cm.total() > 0, "miou: empty confusion matrix");
  const int k = cm.num_classes();
  IouResult r;
  r.per_class.resize(k);
  double iou_sum = 0, acc_sum = 0;
  int iou_n = 0, acc_n = 0;
  uint64_t diag = 0;
  for (int c = 0; c < k; ++c) {
    uint64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm(c, j);
      col += cm(j, c);
    }
    const uint64_t tp = cm(c, c);
    diag += tp;
    const uint64_t uni = row + col - tp;
    if (uni > 0) {
      const double iou = static_cast<double>(tp) / static_cast<double>(uni);
      r.per_class[c] = iou;
      iou_sum += iou;
      ++iou_n;
    }
    if (row > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(row);
      ++acc_n;
    }
  }
  r.mean_iou = iou_sum / iou_n;
  r.mean_accuracy = acc_n > 0 ? acc_sum / acc_n : 0.0;
  r.pixel_accuracy = static_cast<double>(diag) / static_cast<double>(cm.total());
  return r;
}

void DepthAccumulator::add(const DepthMap& pred, const DepthMap& gt, const Grid<uint8_t>& valid) {
  require(pred.height == gt.height && pred.width == gt.width, "depth metrics: shape mismatch");
  require(valid.size() == 0 || (valid.height == gt.height && valid.width == gt.width), "depth metrics: mask shape mismatch");
  for (size_t p = 0; p < gt.size(); ++p) {
    if (valid.size() != 0 && !valid.values[p]) continue;
    const double g = gt.values[p], q = pred.values[p];
    if (!(g > 0)) throw DomainError("depth metrics: nonpositive ground truth on a valid pixel");
    if (!(q > 0)) throw DomainError("depth metrics: nonpositive prediction on a valid pixel");
    const double ratio = std::max(q / g, g / q);
    d1_ += ratio < 1.25 ? 1 : 0;
    d2_ += ratio < 1.25 * 1.25 ? 1 : 0;
    d3_ += ratio < 1.25 * 1.25 * 1.25 ? 1 : 0;
    const double diff = q - g;
    rel_ += std::abs(diff) / g;
    sq_rel_ += diff * diff / g;
    se_ += diff * diff;
    const double dl = std::log(q) - std::log(g);
    se_log_ += dl * dl;
    log10_ += std::abs(std::log10(q) - std::log10(g));
    ++n_;
  }
}

DepthMetrics DepthAccumulator::result() const {
  require(n_ > 0, "depth metrics: empty mask");
  const double n = static_cast<double>(n_);
  DepthMetrics m;
  m.delta1 = d1_ / n;
  m.delta2 = d2_ / n;
  m.delta3 = d3_ / n;
  m.rel = rel_ / n;
  m.sq_rel = sq_rel_ / n;
  m.rmse = std::sqrt(se_ / n);
  m.rmse_log = std::sqrt(se_log_ / n);
  m.log10 = log10_ / n;
  m.count = n_;
  return m;
}

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const Grid<uint8_t>& valid) {
  DepthAccumulator acc;
  acc.add(pred, gt, valid);
  return acc.result();
}

double uncertainty_agreement(const Grid<double>& uncertainty, const Grid<uint8_t>& error_mask) {
  require(uncertainty.height == error_mask.height && uncertainty.width == error_mask.width,
          "uncertainty agreement: shape mismatch");
  const size_t n = uncertainty.size();
  require(n > 0, "uncertainty agreement: empty input");
  double mu = 0, me = 0;
  for (size_t i = 0; i < n; ++i) {
    require(error_mask.values[i] <= 1, "uncertainty agreement: error mask must be binary");
    mu += uncertainty.values[i];
    me += error_mask.values[i];
  }
  const auto [lo, hi] = std::minmax_element(uncertainty.values.begin(), uncertainty.values.end());
  if (*lo == *hi) return 0.0;
  mu /= n;
  me /= n;
  double cov = 0, vu = 0, ve = 0;
  for (size_t i = 0; i < n; ++i) {
    const double du = uncertainty.values[i] - mu, de = error_mask.values[i] - me;
    cov += du * de;
    vu += du * du;
    ve += de * de;
  }
  if (vu <= 0 || ve <= 0) return 0.0;
  return std::clamp(cov / std::sqrt(vu * ve), -1.0, 1.0);
}

}  // namespace ddp
