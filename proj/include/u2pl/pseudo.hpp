#pragma once

#include "u2pl/numerics.hpp"

namespace u2pl {

/// Unreliable-pixel proportion for epoch t: alpha_0 · (1 − t / total).
double dpa_alpha(double alpha_0, int epoch, int total_epochs);

/// Entropy threshold over one unlabeled mini-batch's entropy map.
double compute_gamma(std::span<const double> entropy_map, double alpha_t);

/// Per-pixel entropy of a (…, C) probability map.
FloatTensor entropy_map(const ProbMap& prob);

/// argmax label where entropy < gamma, kIgnore elsewhere. Output dims are
/// the probability map's dims without the class axis.
LabelMap assign_pseudo_labels(const ProbMap& prob, double gamma);

/// eta · total / non-ignored; 0 when nothing survived (skip the loss).
double adaptive_weight(const LabelMap& pseudo, double eta);

}  // namespace u2pl
