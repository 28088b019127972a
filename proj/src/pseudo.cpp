#include "u2pl/pseudo.hpp"

namespace u2pl {

double dpa_alpha(double alpha_0, int epoch, int total_epochs) {
  require(alpha_0 > 0.0 && alpha_0 < 1.0, "dpa_alpha: alpha_0 must be in (0, 1)");
  require(total_epochs > 0, "dpa_alpha: total_epochs must be positive");
  require(epoch >= 0 && epoch <= total_epochs, "dpa_alpha: epoch outside [0, total]");
  if (epoch == total_epochs) return 0.0;
  return alpha_0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

double compute_gamma(std::span<const double> entropy_map, double alpha_t) {
  return quantile_threshold(entropy_map, alpha_t);
}

FloatTensor entropy_map(const ProbMap& prob) {
  require(prob.rank() >= 1, "entropy_map: scalar input");
  std::vector<std::size_t> dims(prob.dims.begin(), prob.dims.end() - 1);
  FloatTensor h(dims);
  for (std::size_t p = 0; p < h.size(); ++p) h[p] = entropy(prob.row(p));
  return h;
}

LabelMap assign_pseudo_labels(const ProbMap& prob, double gamma) {
  std::vector<std::size_t> dims(prob.dims.begin(), prob.dims.end() - 1);
  LabelMap out(dims, kIgnore);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const auto row = prob.row(p);
    if (entropy(row) < gamma) out[p] = static_cast<std::int32_t>(argmax(row));
  }
  return out;
}

double adaptive_weight(const LabelMap& pseudo, double eta) {
  require(eta > 0.0, "adaptive_weight: eta must be positive");
  std::size_t kept = 0;
  for (std::int32_t v : pseudo.data) kept += v != kIgnore ? 1 : 0;
  if (kept == 0) return 0.0;
  return eta * static_cast<double>(pseudo.size()) / static_cast<double>(kept);
}

}  // namespace u2pl
