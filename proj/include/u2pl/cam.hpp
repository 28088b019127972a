#pragma once

#include "u2pl/numerics.hpp"

namespace u2pl {

/// Class activation maps M^c = ReLU(Σ_i w_{c,i} F_i), min-max normalised per
/// class. `features` is (H, W, F) and `cls_weights` is (C, F); the result is
/// (H, W, C) with every class map in [0, 1].
FloatTensor compute_cam(const FloatTensor& features, const FloatTensor& cls_weights);

/// Pixel takes the foreground class present in `image_label` whose CAM is
/// largest, provided that CAM exceeds beta; everything else is background.
/// Class 0 is the background and is never an argmax candidate.
LabelMap cam_pseudo_labels(const FloatTensor& cams, std::span<const std::uint8_t> image_label,
                           double beta);

/// Replaces the background channel by 1 − max over present foreground CAMs,
/// giving class 0 a map on the same scale as the others.
void set_background_cam(FloatTensor& cams, std::span<const std::uint8_t> image_label);

}  // namespace u2pl
