#pragma once

#include <vector>

#include "u2pl/numerics.hpp"

namespace u2pl {

/// Rows are ground truth, columns predictions. Pixels whose ground truth is
/// kIgnore are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  void add(const LabelMap& pred, const LabelMap& gt);
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const;
  std::size_t classes() const { return classes_; }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  /// NaN for classes absent from both prediction and ground truth.
  std::vector<double> per_class_iou;
  double miou = 0.0;
};

IouResult miou(const ConfusionMatrix& cm);
IouResult miou(const LabelMap& pred, const LabelMap& gt, std::size_t classes);

struct ReliabilityStats {
  std::vector<std::uint64_t> reliable;    // per argmax class, H < gamma
  std::vector<std::uint64_t> unreliable;  // per argmax class, H >= gamma
  double unreliable_fraction = 0.0;
};

ReliabilityStats reliability_stats(const ProbMap& prob, double gamma);

/// Per-pixel argmax of a (…, C) map.
LabelMap argmax_labels(const FloatTensor& scores);

}  // namespace u2pl
