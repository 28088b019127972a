#pragma once

#include <deque>
#include <vector>

#include "u2pl/numerics.hpp"

namespace u2pl {

// Negative-key qualification predicates. `rank` arguments come from
// category_order(p)[c].

/// Labeled pixel: labeled, not of class c, and c among its top r_l
/// predictions.
bool qualify_negative_labeled(int label, std::span<const double> prob, int cls, int r_l);
bool qualify_negative_labeled_rank(int label, int rank, int cls, int r_l);

/// Unlabeled pixel: unreliable (H > gamma) and r_l <= rank(c) < r_h.
bool qualify_negative_unlabeled(double entropy, double gamma, std::span<const double> prob, int cls,
                                int r_l, int r_h);
bool qualify_negative_unlabeled_rank(double entropy, double gamma, int rank, int r_l, int r_h);

/// Ablation counterpart that draws negatives from reliable (H < gamma)
/// pixels instead, with the same rank window.
bool qualify_negative_unlabeled_reliable_rank(double entropy, double gamma, int rank, int r_l,
                                              int r_h);

/// Weak labels: class absent from the image, or CAM for c below beta.
bool qualify_negative_ws(std::span<const std::uint8_t> image_label, double cam_value, int cls,
                         double beta);

/// Candidate anchor pixel indices per class. `labels` is the ground truth
/// for labeled batches or the (already filtered) pseudo-labels otherwise;
/// `entropy`/`gamma` are only consulted for unlabeled batches.
std::vector<std::vector<std::size_t>> collect_anchors_ss(const LabelMap& labels, const ProbMap& prob,
                                                         double delta_p, bool labeled,
                                                         const FloatTensor* entropy = nullptr,
                                                         double gamma = 0.0);

/// A negative key with a caller-defined provenance tag.
struct BankEntry {
  std::vector<double> key;
  std::uint64_t tag = 0;

  bool operator==(const BankEntry&) const = default;
};

/// Per-class bounded FIFO queues of detached key vectors.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::vector<std::size_t> capacities, std::size_t dim);

  std::size_t classes() const { return queues_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t size(std::size_t cls) const { return queues_.at(cls).size(); }
  std::size_t capacity(std::size_t cls) const { return capacities_.at(cls); }
  std::vector<std::size_t> sizes() const;

  /// Appends rows of an (n, D) tensor, evicting the oldest entries beyond
  /// capacity. `tags` is either empty or one tag per row.
  void push(std::size_t cls, const FloatTensor& keys, std::span<const std::uint64_t> tags = {});
  void push(std::size_t cls, BankEntry entry);

  /// N uniform draws: without replacement when size >= N, with replacement
  /// when 0 < size < N, empty when the queue is empty.
  std::vector<BankEntry> sample(std::size_t cls, std::size_t n, Rng& rng) const;

  const std::deque<BankEntry>& entries(std::size_t cls) const { return queues_.at(cls); }

  bool operator==(const MemoryBank&) const = default;

 private:
  void evict(std::size_t cls);

  std::vector<std::size_t> capacities_;
  std::size_t dim_ = 0;
  std::vector<std::deque<BankEntry>> queues_;
};

/// Draws `m` indices into [0, pool): without replacement if pool >= m,
/// with replacement if 0 < pool < m, none if pool == 0.
std::vector<std::size_t> sample_indices(std::size_t pool, std::size_t m, Rng& rng);

/// Samples M anchors out of a candidate list.
std::vector<std::size_t> sample_anchors(std::span<const std::size_t> candidates, std::size_t m,
                                        Rng& rng);

}  // namespace u2pl
