#pragma once

#include "u2pl/numerics.hpp"

namespace u2pl {

/// Scalar loss value plus the gradient with respect to its differentiable
/// input (logits or anchors), shaped like that input.
struct LossValue {
  double value = 0.0;
  FloatTensor grad;
};

/// Mean over non-ignored pixels of −ln softmax(logits)[target]. `logits` is
/// (…, C) and `target` has the same leading dims.
LossValue cross_entropy(const FloatTensor& logits, const LabelMap& target);

/// xi1 · CE(p, y) + xi2 · CE(y, p) where the one-hot target's zeros are
/// floored at eps_floor inside the logarithm.
LossValue symmetric_cross_entropy(const FloatTensor& logits, const LabelMap& target, double xi1,
                                  double xi2, double eps_floor);

/// Pixel-level InfoNCE with cosine similarities, averaged over the M anchor
/// rows. Gradient flows into `anchors` (M, D) only. Empty negatives yield
/// value 0 and a zero gradient; the caller treats that as "skip".
LossValue infonce(const FloatTensor& anchors, std::span<const double> positive,
                  const FloatTensor& negatives, double tau);

/// Multi-label soft margin loss: class-mean binary cross-entropy on
/// sigmoid(logits).
LossValue multilabel_classification(const FloatTensor& cls_logits,
                                    std::span<const std::uint8_t> image_label);

/// L_s + lambda_u · L_u + lambda_c · L_c.
double total_objective(double loss_s, double loss_u, double loss_c, double lambda_u,
                       double lambda_c);

}  // namespace u2pl
