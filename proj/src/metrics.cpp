#include "u2pl/metrics.hpp"

#include <cmath>
#include <limits>

namespace u2pl {

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  require(pred.dims == gt.dims, "confusion matrix: prediction/ground-truth shape mismatch");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::int32_t g = gt[i];
    if (g == kIgnore) continue;
    const std::int32_t p = pred[i];
    require(g >= 0 && static_cast<std::size_t>(g) < classes_, "confusion matrix: gt out of range");
    require(p >= 0 && static_cast<std::size_t>(p) < classes_,
            "confusion matrix: prediction out of range");
    ++counts_[static_cast<std::size_t>(g) * classes_ + static_cast<std::size_t>(p)];
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

IouResult miou(const ConfusionMatrix& cm) {
  require(cm.total() > 0, "miou: no evaluated pixels");
  const std::size_t c = cm.classes();
  IouResult r;
  r.per_class_iou.assign(c, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t tp = cm.at(k, k);
    std::uint64_t fn = 0;
    std::uint64_t fp = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fn += cm.at(k, j);
      fp += cm.at(j, k);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.per_class_iou[k] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += r.per_class_iou[k];
    ++present;
  }
  r.miou = sum / static_cast<double>(present);
  return r;
}

IouResult miou(const LabelMap& pred, const LabelMap& gt, std::size_t classes) {
  ConfusionMatrix cm(classes);
  cm.add(pred, gt);
  return miou(cm);
}

ReliabilityStats reliability_stats(const ProbMap& prob, double gamma) {
  const std::size_t c = prob.inner();
  ReliabilityStats s;
  s.reliable.assign(c, 0);
  s.unreliable.assign(c, 0);
  const std::size_t pixels = prob.size() / c;
  std::uint64_t unreliable = 0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const auto row = prob.row(p);
    const std::size_t k = argmax(row);
    if (entropy(row) < gamma) {
      ++s.reliable[k];
    } else {
      ++s.unreliable[k];
      ++unreliable;
    }
  }
  s.unreliable_fraction = pixels == 0 ? 0.0 : static_cast<double>(unreliable) / pixels;
  return s;
}

LabelMap argmax_labels(const FloatTensor& scores) {
  std::vector<std::size_t> dims(scores.dims.begin(), scores.dims.end() - 1);
  LabelMap out(dims);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = static_cast<std::int32_t>(argmax(scores.row(p)));
  return out;
}

}  // namespace u2pl
