#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saip/label_map.hpp"

namespace saip::datalab {

/// counts[g][p]: pixels of ground-truth class g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  /// Accumulates one prediction/ground-truth pair; throws on shape mismatch
  /// or an out-of-range class.
  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionMatrix& other);

  int classes() const { return classes_; }
  std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * classes_ + pred)]; }
  std::int64_t& at(int gt, int pred) { return counts_[static_cast<std::size_t>(gt * classes_ + pred)]; }
  std::int64_t total() const;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt, int classes);

struct Metrics {
  double miou = 0;
  double oa = 0;
  double mf1 = 0;
  std::vector<double> iou;
  std::vector<double> f1;
  /// False for classes absent from both ground truth and prediction; those
  /// are excluded from the means and reported as NaN.
  std::vector<bool> counted;
};

Metrics compute_metrics(const ConfusionMatrix& m);

/// `class,iou,f1` rows followed by `mIoU`, `OA`, `mF1` summary rows.
std::string metrics_csv(const Metrics& metrics);

}  // namespace saip::datalab
