#include "u2pl/cam.hpp"

#include <algorithm>

namespace u2pl {

FloatTensor compute_cam(const FloatTensor& features, const FloatTensor& cls_weights) {
  require(features.rank() == 3, "compute_cam: features must be (H, W, F)");
  require(cls_weights.rank() == 2 && cls_weights.dim(1) == features.dim(2),
          "compute_cam: weights must be (C, F)");
  const std::size_t px = features.dim(0) * features.dim(1);
  const std::size_t f = features.dim(2);
  const std::size_t c = cls_weights.dim(0);

  FloatTensor cams({features.dim(0), features.dim(1), c});
  std::vector<double> map(px);
  for (std::size_t k = 0; k < c; ++k) {
    const auto w = cls_weights.row(k);
    for (std::size_t p = 0; p < px; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < f; ++i) s += w[i] * features[p * f + i];
      map[p] = std::max(s, 0.0);
    }
    const auto norm = minmax_normalize(map);
    for (std::size_t p = 0; p < px; ++p) cams[p * c + k] = norm[p];
  }
  return cams;
}

LabelMap cam_pseudo_labels(const FloatTensor& cams, std::span<const std::uint8_t> image_label,
                           double beta) {
  require(beta > 0.0 && beta < 1.0, "cam_pseudo_labels: beta must be in (0, 1)");
  require(cams.rank() == 3 && cams.dim(2) == image_label.size(),
          "cam_pseudo_labels: CAM/label shape mismatch");
  const std::size_t c = cams.dim(2);
  LabelMap out({cams.dim(0), cams.dim(1)}, 0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const auto m = cams.row(p);
    std::int32_t best = 0;
    double best_val = beta;
    for (std::size_t k = 1; k < c; ++k) {
      if (image_label[k] == 0) continue;
      if (m[k] > best_val) {
        best_val = m[k];
        best = static_cast<std::int32_t>(k);
      }
    }
    out[p] = best;
  }
  return out;
}

void set_background_cam(FloatTensor& cams, std::span<const std::uint8_t> image_label) {
  const std::size_t c = cams.inner();
  for (std::size_t p = 0; p < cams.size() / c; ++p) {
    auto m = cams.row(p);
    double hi = 0.0;
    for (std::size_t k = 1; k < c; ++k) {
      if (image_label[k] != 0) hi = std::max(hi, m[k]);
    }
    m[0] = 1.0 - hi;
  }
}

}  // namespace u2pl
