#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ddp/tensor.hpp"

namespace ddp {

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  /// Pixels whose ground truth equals `ignore_index` are skipped.
  void add(const LabelMap& gt, const LabelMap& pred, int ignore_index = -1);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return k_; }
  uint64_t operator()(int gt, int pred) const { return counts_[static_cast<size_t>(gt) * k_ + pred]; }
  uint64_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<uint64_t> counts_;
};

struct IouResult {
  /// Empty for classes absent from both ground truth and prediction.
  std::vector<std::optional<double>> per_class;
  double mean_iou = 0.0;
  /// Mean per-class accuracy TP / (TP + FN) over classes present in ground truth.
  double mean_accuracy = 0.0;
  double pixel_accuracy = 0.0;
};

IouResult miou(const ConfusionMatrix& cm);

struct DepthMetrics {
  double delta1 = 0, delta2 = 0, delta3 = 0;
  double rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, log10 = 0;
  uint64_t count = 0;
};

/// Standard monocular-depth metrics over pixels where `valid` is nonzero
/// (all pixels when `valid` is empty). δ thresholds are strict.
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const Grid<uint8_t>& valid = {});

/// Running sums so depth metrics can be accumulated over a dataset.
class DepthAccumulator {
 public:
  void add(const DepthMap& pred, const DepthMap& gt, const Grid<uint8_t>& valid = {});
  DepthMetrics result() const;

 private:
  uint64_t n_ = 0;
  double d1_ = 0, d2_ = 0, d3_ = 0, rel_ = 0, sq_rel_ = 0, se_ = 0, se_log_ = 0, log10_ = 0;
};

/// Point-biserial correlation between uncertainty values and a binary
/// misprediction mask; 0 when either side has zero variance.
double uncertainty_agreement(const Grid<double>& uncertainty, const Grid<uint8_t>& error_mask);

}  // namespace ddp
