#include "u2pl/proto.hpp"

#include <cmath>

namespace u2pl {

PrototypeBank::PrototypeBank(std::size_t classes, std::size_t d)
    : dim(d), protos(classes, std::vector<double>(d, 0.0)), initialized(classes, false) {}

bool PrototypeBank::all_initialized() const {
  for (bool b : initialized) {
    if (!b) return false;
  }
  return !initialized.empty();
}

void CentroidAccumulator::add(std::span<const double> v) {
  require(v.size() == sum_.size(), "centroid: dimension mismatch");
  for (std::size_t i = 0; i < v.size(); ++i) sum_[i] += v[i];
  ++count_;
}

std::optional<std::vector<double>> CentroidAccumulator::mean() const {
  if (count_ == 0) return std::nullopt;
  std::vector<double> m = sum_;
  for (double& v : m) v /= static_cast<double>(count_);
  return m;
}

std::optional<std::vector<double>> batch_centroid(const FloatTensor& reprs) {
  if (reprs.empty()) return std::nullopt;
  require(reprs.rank() == 2, "batch_centroid: expected an (n, D) tensor");
  CentroidAccumulator acc(reprs.dim(1));
  for (std::size_t i = 0; i < reprs.dim(0); ++i) acc.add(reprs.row(i));
  return acc.mean();
}

void momentum_update(PrototypeBank& bank, std::size_t cls, std::span<const double> centroid,
                     double m_proto) {
  require(m_proto >= 0.0 && m_proto <= 1.0, "momentum_update: m_proto outside [0,1]");
  require(cls < bank.classes(), "momentum_update: class out of range");
  require(centroid.size() == bank.dim, "momentum_update: dimension mismatch");
  auto& z = bank.protos[cls];
  if (!bank.initialized[cls]) {
    z.assign(centroid.begin(), centroid.end());
    bank.initialized[cls] = true;
    return;
  }
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = m_proto * z[i] + (1.0 - m_proto) * centroid[i];
}

std::vector<double> denoise_weights(std::span<const double> repr_pixel, const PrototypeBank& bank) {
  require(repr_pixel.size() == bank.dim, "denoise_weights: dimension mismatch");
  std::vector<double> neg_dist(bank.classes());
  for (std::size_t c = 0; c < bank.classes(); ++c) {
    require(bank.initialized[c], "denoise_weights: prototype " + std::to_string(c) + " not initialized");
    double s = 0.0;
    for (std::size_t i = 0; i < bank.dim; ++i) {
      const double d = repr_pixel[i] - bank.protos[c][i];
      s += d * d;
    }
    neg_dist[c] = -std::sqrt(s);
  }
  return softmax(neg_dist);
}

FloatTensor denoise_weight_map(const FloatTensor& reprs, const PrototypeBank& bank) {
  std::vector<std::size_t> dims(reprs.dims.begin(), reprs.dims.end() - 1);
  const std::size_t pixels = FloatTensor::element_count(dims);
  dims.push_back(bank.classes());
  FloatTensor w(dims);
  for (std::size_t p = 0; p < pixels; ++p) {
    const auto wp = denoise_weights(reprs.row(p), bank);
    std::copy(wp.begin(), wp.end(), w.row(p).begin());
  }
  return w;
}

ProbMap denoise_predictions(const ProbMap& prob, const FloatTensor& weights) {
  require(prob.dims == weights.dims, "denoise_predictions: shape mismatch");
  ProbMap out = prob;
  const std::size_t c = prob.inner();
  for (std::size_t p = 0; p < prob.size() / c; ++p) {
    auto dst = out.row(p);
    const auto wp = weights.row(p);
    double mass = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      dst[k] *= wp[k];
      mass += dst[k];
    }
    if (!(mass > 0.0)) {
      const auto src = prob.row(p);
      std::copy(src.begin(), src.end(), dst.begin());
      continue;
    }
    for (double& v : dst) v /= mass;
  }
  return out;
}

}  // namespace u2pl
