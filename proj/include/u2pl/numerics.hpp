#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace u2pl {

/// Raised when a caller violates an operation's precondition.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

/// Dense row-major tensor. Only the handful of accessors the training code
/// needs; there is no broadcasting or view machinery.
template <typename T>
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d, T fill = T{}) : dims(std::move(d)) {
    data.assign(element_count(dims), fill);
  }

  static std::size_t element_count(const std::vector<std::size_t>& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::size_t dim(std::size_t i) const { return dims.at(i); }
  std::size_t rank() const { return dims.size(); }

  /// Extent of the innermost axis (1 for scalars).
  std::size_t inner() const { return dims.empty() ? 1 : dims.back(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  std::span<T> row(std::size_t i) { return {data.data() + i * inner(), inner()}; }
  std::span<const T> row(std::size_t i) const { return {data.data() + i * inner(), inner()}; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  bool operator==(const Tensor&) const = default;
};

using FloatTensor = Tensor<double>;
using IntTensor = Tensor<std::int32_t>;
using ByteTensor = Tensor<std::uint8_t>;

/// A (…, C) tensor whose innermost rows are probability vectors.
using ProbMap = FloatTensor;
/// Per-pixel class map; IGNORE marks pixels excluded from supervision.
using LabelMap = IntTensor;
inline constexpr std::int32_t kIgnore = -1;

inline constexpr double kSimplexTolerance = 1e-9;

std::vector<double> softmax(std::span<const double> logits);
void softmax_into(std::span<const double> logits, std::span<double> out);

/// Shannon entropy in nats with 0·ln 0 = 0.
double entropy(std::span<const double> p);
/// Same formula without the simplex validation; for hot loops over maps that
/// are already known to be valid.
double entropy_unchecked(std::span<const double> p);

/// (1 − alpha)-quantile with linear interpolation between order statistics.
/// alpha == 0 gives +inf and alpha == 1 gives −inf.
double quantile_threshold(std::span<const double> values, double alpha);

/// Descending-probability rank of each class; ties go to the lower index.
std::vector<int> category_order(std::span<const double> p);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Rescales to [0, 1]; a constant map becomes all zeros.
std::vector<double> minmax_normalize(std::span<const double> m);

std::size_t argmax(std::span<const double> v);

double l2_norm(std::span<const double> v);

/// Seeded PRNG with platform-independent derived distributions. The standard
/// library's distribution objects are implementation-defined, so they are
/// avoided wherever a value feeds a persisted artifact.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n) by rejection, no modulo bias.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one draw per pair of uniforms).
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::iter_swap(first + (i - 1), first + j);
    }
  }

  std::string save() const;
  void load(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// Number of worker threads honoring the U2PL_THREADS cap.
std::size_t worker_threads();

/// Runs fn(i) for i in [0, n) over up to worker_threads() threads. Callers
/// write results into per-index slots and reduce afterwards in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace u2pl
