#pragma once

#include <optional>
#include <vector>

#include "u2pl/numerics.hpp"

namespace u2pl {

/// One momentum-averaged centroid per class in representation space.
struct PrototypeBank {
  std::size_t dim = 0;
  std::vector<std::vector<double>> protos;
  std::vector<bool> initialized;

  PrototypeBank() = default;
  PrototypeBank(std::size_t classes, std::size_t dim);

  std::size_t classes() const { return protos.size(); }
  bool all_initialized() const;

  bool operator==(const PrototypeBank&) const = default;
};

/// Streaming mean of D-vectors; the building block of batch centroids.
class CentroidAccumulator {
 public:
  explicit CentroidAccumulator(std::size_t dim) : sum_(dim, 0.0) {}
  void add(std::span<const double> v);
  std::size_t count() const { return count_; }
  /// nullopt when nothing was added.
  std::optional<std::vector<double>> mean() const;

 private:
  std::vector<double> sum_;
  std::size_t count_ = 0;
};

/// Arithmetic mean of the rows of an (n, D) tensor; nullopt for n == 0.
std::optional<std::vector<double>> batch_centroid(const FloatTensor& reprs);

/// First update adopts the centroid; later ones blend
/// m · previous + (1 − m) · centroid.
void momentum_update(PrototypeBank& bank, std::size_t cls, std::span<const double> centroid,
                     double m_proto);

/// softmax over negative Euclidean distances to every prototype.
std::vector<double> denoise_weights(std::span<const double> repr_pixel, const PrototypeBank& bank);

/// Per-pixel weights for a (…, D) feature map; result is (…, C).
FloatTensor denoise_weight_map(const FloatTensor& reprs, const PrototypeBank& bank);

/// p* ∝ w ⊙ p renormalised per pixel; pixels with zero mass keep p.
ProbMap denoise_predictions(const ProbMap& prob, const FloatTensor& weights);

}  // namespace u2pl
