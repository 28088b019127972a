#include "u2pl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <sstream>
#include <thread>

namespace u2pl {

void softmax_into(std::span<const double> logits, std::span<double> out) {
  require(!logits.empty(), "softmax: empty input");
  require(out.size() == logits.size(), "softmax: output size mismatch");
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    require(std::isfinite(v), "softmax: non-finite logit");
    hi = std::max(hi, v);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - hi);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax_into(logits, out);
  return out;
}

double entropy_unchecked(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double entropy(std::span<const double> p) {
  require(!p.empty(), "entropy: empty distribution");
  double sum = 0.0;
  for (double v : p) {
    require(v >= 0.0, "entropy: negative probability");
    sum += v;
  }
  require(std::abs(sum - 1.0) <= kSimplexTolerance, "entropy: input is not on the simplex");
  return entropy_unchecked(p);
}

double quantile_threshold(std::span<const double> values, double alpha) {
  require(!values.empty(), "quantile_threshold: empty array");
  require(alpha >= 0.0 && alpha <= 1.0, "quantile_threshold: alpha outside [0,1]");
  if (alpha == 0.0) return std::numeric_limits<double>::infinity();
  if (alpha == 1.0) return -std::numeric_limits<double>::infinity();

  std::vector<double> sorted(values.begin(), values.end());
  const double pos = static_cast<double>(sorted.size() - 1) * (1.0 - alpha);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  // Only the two neighbouring order statistics are needed.
  std::nth_element(sorted.begin(), sorted.begin() + lo, sorted.end());
  const double v_lo = sorted[lo];
  double v_hi = v_lo;
  if (hi != lo) v_hi = *std::min_element(sorted.begin() + lo + 1, sorted.end());
  const double frac = pos - static_cast<double>(lo);
  return v_lo + frac * (v_hi - v_lo);
}

std::vector<int> category_order(std::span<const double> p) {
  require(!p.empty(), "category_order: empty distribution");
  std::vector<int> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return p[a] > p[b]; });
  std::vector<int> order(p.size());
  for (std::size_t r = 0; r < idx.size(); ++r) order[idx[r]] = static_cast<int>(r);
  return order;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine_similarity: length mismatch");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  require(na > 1e-12 && nb > 1e-12, "cosine_similarity: zero-norm vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::vector<double> minmax_normalize(std::span<const double> m) {
  std::vector<double> out(m.size(), 0.0);
  if (m.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(m.begin(), m.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = std::clamp((m[i] - lo) / range, 0.0, 1.0);
  return out;
}

std::size_t argmax(std::span<const double> v) {
  require(!v.empty(), "argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, "Rng::below: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string Rng::save() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::load(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  require(!is.fail(), "Rng::load: malformed engine state");
}

std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("U2PL_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace u2pl
