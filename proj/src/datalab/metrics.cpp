#include "saip/datalab/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace saip::datalab {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0);
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " does not match ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    const int g = gt.values[i], p = pred.values[i];
    if (g < 0 || g >= classes_ || p < 0 || p >= classes_) {
      throw std::out_of_range("class " + std::to_string(g < 0 || g >= classes_ ? g : p) + " at pixel " +
                              std::to_string(i) + " outside [0, " + std::to_string(classes_) + ")");
    }
    ++at(g, p);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt, int classes) {
  ConfusionMatrix m(classes);
  m.add(pred, gt);
  return m;
}

Metrics compute_metrics(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw std::invalid_argument("metrics of an empty confusion matrix");
  const int k = m.classes();
  Metrics out;
  std::int64_t trace = 0;
  double iou_sum = 0, f1_sum = 0;
  int counted = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += m.at(c, j);
      col += m.at(j, c);
    }
    const std::int64_t tp = m.at(c, c), fn = row - tp, fp = col - tp;
    trace += tp;
    const bool present = row + col > 0;
    out.counted.push_back(present);
    if (!present) {
      out.iou.push_back(std::numeric_limits<double>::quiet_NaN());
      out.f1.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    out.iou.push_back(iou);
    out.f1.push_back(f1);
    iou_sum += iou;
    f1_sum += f1;
    ++counted;
  }
  out.miou = iou_sum / counted;
  out.mf1 = f1_sum / counted;
  out.oa = static_cast<double>(trace) / static_cast<double>(total);
  return out;
}

std::string metrics_csv(const Metrics& metrics) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "class,iou,f1\n";
  for (std::size_t c = 0; c < metrics.iou.size(); ++c) {
    out << c << ',';
    if (metrics.counted[c]) out << metrics.iou[c] << ',' << metrics.f1[c] << '\n';
    else out << "nan,nan\n";
  }
  out << "mIoU," << metrics.miou << '\n' << "OA," << metrics.oa << '\n' << "mF1," << metrics.mf1 << '\n';
  return out.str();
}

}  // namespace saip::datalab
