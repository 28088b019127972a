#pragma once

#include <string>
#include <utility>
#include <vector>

#include "u2pl/numerics.hpp"

namespace u2pl {

struct ModelSpec {
  int features = 16;  // F, encoder width; must be even
  int classes = 6;    // C
  int repr_dim = 16;  // D

  bool operator==(const ModelSpec&) const = default;
};

/// Weights of the encoder h (two 3×3 convs), segmentation head f (1×1),
/// representation head g (two 1×1 layers, the first halving the width) and
/// classification head f_cls (linear over globally pooled encoder features).
///
/// Layouts: 3×3 kernels are (3, 3, in, out); 1×1 kernels are (in, out);
/// the classifier is (C, F) so that its rows are per-class CAM weights.
struct ModelParams {
  ModelSpec spec;
  FloatTensor conv1_w, conv1_b;
  FloatTensor conv2_w, conv2_b;
  FloatTensor seg_w, seg_b;
  FloatTensor rep1_w, rep1_b;
  FloatTensor rep2_w, rep2_b;
  FloatTensor cls_w, cls_b;

  /// Stable names in a fixed order, used for checkpoints and optimizers.
  std::vector<std::pair<std::string, FloatTensor*>> named();
  std::vector<std::pair<std::string, const FloatTensor*>> named() const;

  std::size_t parameter_count() const;

  bool operator==(const ModelParams&) const = default;
};

/// All-zero parameters with the shapes implied by `spec`.
ModelParams zero_params(const ModelSpec& spec);

/// Kaiming-style fan-in uniform weights, zero biases.
ModelParams init_params(std::uint64_t seed, const ModelSpec& spec);

/// dst += scale · src, tensor by tensor.
void add_scaled(ModelParams& dst, const ModelParams& src, double scale);

/// Outputs of one image plus the activations backward() needs.
struct ModelOutputs {
  FloatTensor logits;      // (H, W, C)
  ProbMap prob;            // (H, W, C)
  FloatTensor repr;        // (H, W, D)
  FloatTensor cls_logits;  // (C)
  FloatTensor features;    // encoder output h(x), (H, W, F)

  FloatTensor hidden1;     // post-ReLU conv1, (H, W, F)
  FloatTensor rep_hidden;  // post-ReLU first rep layer, (H, W, F/2)
  FloatTensor pooled;      // (F)
};

/// Constant subtracted from every input intensity before the first conv.
inline constexpr double kInputMean = 0.5;

ModelOutputs forward(const ModelParams& params, const FloatTensor& image);

/// Gradients of some scalar objective with respect to the forward outputs.
/// An empty tensor stands for an all-zero gradient.
struct UpstreamGrads {
  FloatTensor logits;
  FloatTensor repr;
  FloatTensor cls_logits;
};

/// Exact reverse-mode gradients with respect to every parameter.
ModelParams backward(const ModelParams& params, const FloatTensor& image,
                     const ModelOutputs& outputs, const UpstreamGrads& upstream);
ModelParams backward(const ModelParams& params, const FloatTensor& image,
                     const UpstreamGrads& upstream);

/// teacher ← m · teacher + (1 − m) · student
void ema_update(ModelParams& teacher, const ModelParams& student, double momentum);

}  // namespace u2pl
