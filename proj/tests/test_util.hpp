#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "u2pl/numerics.hpp"

namespace testutil {

inline u2pl::FloatTensor random_tensor(std::vector<std::size_t> dims, u2pl::Rng& rng, double scale = 1.0) {
  u2pl::FloatTensor t(std::move(dims));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

inline u2pl::FloatTensor uniform_tensor(std::vector<std::size_t> dims, u2pl::Rng& rng) {
  u2pl::FloatTensor t(std::move(dims));
  for (double& v : t.data) v = rng.uniform();
  return t;
}

/// Random probability map with innermost axis of length c.
inline u2pl::ProbMap random_prob(std::size_t pixels, std::size_t c, u2pl::Rng& rng, double sharpness = 2.0) {
  u2pl::ProbMap p({pixels, c});
  std::vector<double> logits(c);
  for (std::size_t i = 0; i < pixels; ++i) {
    for (double& l : logits) l = sharpness * rng.normal();
    u2pl::softmax_into(logits, p.row(i));
  }
  return p;
}

inline u2pl::LabelMap random_labels(std::vector<std::size_t> dims, int classes, u2pl::Rng& rng,
                                    double ignore_rate = 0.0) {
  u2pl::LabelMap t(std::move(dims));
  for (auto& v : t.data) {
    v = rng.uniform() < ignore_rate ? u2pl::kIgnore : static_cast<int>(rng.below(classes));
  }
  return t;
}

/// max_i |a_i − n_i| / max(1e-8, max_i |n_i|): the gradient-check error used
/// throughout; the floor only guards against division by zero.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0;
  double scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / scale;
}

/// Central finite differences of f at x (which is restored afterwards).
inline std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f,
                                            double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace testutil
