#include "u2pl/losses.hpp"

#include <algorithm>
#include <cmath>

namespace u2pl {
namespace {

void check_target_shape(const FloatTensor& logits, const LabelMap& target) {
  require(logits.rank() >= 1 && target.size() * logits.inner() == logits.size(),
          "loss: logits and target shapes disagree");
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

LossValue cross_entropy(const FloatTensor& logits, const LabelMap& target) {
  return symmetric_cross_entropy(logits, target, 1.0, 0.0, 1.0);
}

LossValue symmetric_cross_entropy(const FloatTensor& logits, const LabelMap& target, double xi1,
                                  double xi2, double eps_floor) {
  check_target_shape(logits, target);
  require(eps_floor > 0.0, "symmetric_cross_entropy: eps_floor must be positive");
  const std::size_t c = logits.inner();
  LossValue out;
  out.grad = FloatTensor(logits.dims);

  std::size_t kept = 0;
  for (std::int32_t y : target.data) {
    if (y == kIgnore) continue;
    require(y >= 0 && static_cast<std::size_t>(y) < c, "loss: target class out of range");
    ++kept;
  }
  if (kept == 0) return out;

  // Reverse term: −Σ_k p_k ln y_k with ln y_k = ln eps for k ≠ target.
  const double neg_log_eps = -std::log(std::min(eps_floor, 1.0));
  const double inv = 1.0 / static_cast<double>(kept);
  std::vector<double> p(c);
  double total = 0.0;
  for (std::size_t px = 0; px < target.size(); ++px) {
    const std::int32_t y = target[px];
    if (y == kIgnore) continue;
    const auto z = logits.row(px);
    softmax_into(z, p);
    const double hi = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - hi);
    lse = hi + std::log(lse);
    const double forward_ce = lse - z[y];
    const double reverse_ce = neg_log_eps * (1.0 - p[y]);
    total += xi1 * forward_ce + xi2 * reverse_ce;

    auto g = out.grad.row(px);
    const double py = p[y];
    for (std::size_t k = 0; k < c; ++k) {
      const double onehot = static_cast<std::size_t>(y) == k ? 1.0 : 0.0;
      // d(1 − p_y)/dz_k = −p_y (δ_yk − p_k)
      const double d_rev = -py * (onehot - p[k]);
      g[k] = inv * (xi1 * (p[k] - onehot) + xi2 * neg_log_eps * d_rev);
    }
  }
  out.value = total * inv;
  return out;
}

LossValue infonce(const FloatTensor& anchors, std::span<const double> positive,
                  const FloatTensor& negatives, double tau) {
  require(tau > 0.0, "infonce: tau must be positive");
  require(anchors.rank() == 2, "infonce: anchors must be (M, D)");
  const std::size_t m = anchors.dim(0);
  const std::size_t d = anchors.dim(1);
  require(positive.size() == d, "infonce: positive key dimension mismatch");
  LossValue out;
  out.grad = FloatTensor(anchors.dims);
  if (negatives.empty() || m == 0) return out;
  require(negatives.rank() == 2 && negatives.dim(1) == d, "infonce: negatives must be (N, D)");
  const std::size_t n = negatives.dim(0);

  // Unit-normalised keys; similarities then reduce to dot products.
  auto unit = [](std::span<const double> v) {
    const double norm = l2_norm(v);
    require(norm > 1e-12, "infonce: zero-norm key");
    std::vector<double> u(v.begin(), v.end());
    for (double& x : u) x /= norm;
    return u;
  };
  const auto pos_unit = unit(positive);
  std::vector<std::vector<double>> neg_unit;
  neg_unit.reserve(n);
  for (std::size_t j = 0; j < n; ++j) neg_unit.push_back(unit(negatives.row(j)));

  std::vector<double> sims(n + 1);
  std::vector<double> weights(n + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto z = anchors.row(i);
    const double norm = l2_norm(z);
    require(norm > 1e-12, "infonce: zero-norm anchor");
    auto cos_with = [&](const std::vector<double>& key) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += z[k] * key[k];
      return dot / norm;
    };
    sims[0] = cos_with(pos_unit);
    for (std::size_t j = 0; j < n; ++j) sims[j + 1] = cos_with(neg_unit[j]);

    const double hi = *std::max_element(sims.begin(), sims.end()) / tau;
    double denom = 0.0;
    for (std::size_t j = 0; j <= n; ++j) {
      weights[j] = std::exp(sims[j] / tau - hi);
      denom += weights[j];
    }
    total += hi + std::log(denom) - sims[0] / tau;

    // dL/dcos_j = (softmax_j − [j == 0]) / tau, then dcos/dz through the norm.
    auto g = out.grad.row(i);
    const double scale = 1.0 / (static_cast<double>(m) * tau);
    for (std::size_t j = 0; j <= n; ++j) {
      const double coeff = scale * (weights[j] / denom - (j == 0 ? 1.0 : 0.0));
      if (coeff == 0.0) continue;
      const auto& key = j == 0 ? pos_unit : neg_unit[j - 1];
      for (std::size_t k = 0; k < d; ++k) {
        g[k] += coeff * (key[k] - sims[j] * z[k] / norm) / norm;
      }
    }
  }
  out.value = total / static_cast<double>(m);
  return out;
}

LossValue multilabel_classification(const FloatTensor& cls_logits,
                                    std::span<const std::uint8_t> image_label) {
  const std::size_t c = cls_logits.size();
  require(c > 0 && image_label.size() == c, "multilabel: logits/label length mismatch");
  LossValue out;
  out.grad = FloatTensor(cls_logits.dims);
  const double inv = 1.0 / static_cast<double>(c);
  for (std::size_t k = 0; k < c; ++k) {
    const double s = cls_logits[k];
    const double y = image_label[k] != 0 ? 1.0 : 0.0;
    // −[y ln σ(s) + (1 − y) ln(1 − σ(s))] = softplus(s) − y·s
    out.value += inv * (softplus(s) - y * s);
    out.grad[k] = inv * (sigmoid(s) - y);
  }
  return out;
}

double total_objective(double loss_s, double loss_u, double loss_c, double lambda_u,
                       double lambda_c) {
  require(lambda_u >= 0.0 && lambda_c >= 0.0, "total_objective: weights must be non-negative");
  return loss_s + lambda_u * loss_u + lambda_c * loss_c;
}

}  // namespace u2pl
