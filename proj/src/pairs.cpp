#include "u2pl/pairs.hpp"

#include <numeric>

namespace u2pl {

bool qualify_negative_labeled_rank(int label, int rank, int cls, int r_l) {
  return label != kIgnore && label != cls && rank >= 0 && rank < r_l;
}

bool qualify_negative_labeled(int label, std::span<const double> prob, int cls, int r_l) {
  require(cls >= 0 && static_cast<std::size_t>(cls) < prob.size(), "qualify_negative: bad class");
  return qualify_negative_labeled_rank(label, category_order(prob)[cls], cls, r_l);
}

bool qualify_negative_unlabeled_rank(double entropy, double gamma, int rank, int r_l, int r_h) {
  return entropy > gamma && rank >= r_l && rank < r_h;
}

bool qualify_negative_unlabeled_reliable_rank(double entropy, double gamma, int rank, int r_l,
                                              int r_h) {
  return entropy < gamma && rank >= r_l && rank < r_h;
}

bool qualify_negative_unlabeled(double entropy, double gamma, std::span<const double> prob, int cls,
                                int r_l, int r_h) {
  require(cls >= 0 && static_cast<std::size_t>(cls) < prob.size(), "qualify_negative: bad class");
  return qualify_negative_unlabeled_rank(entropy, gamma, category_order(prob)[cls], r_l, r_h);
}

bool qualify_negative_ws(std::span<const std::uint8_t> image_label, double cam_value, int cls,
                         double beta) {
  require(cls >= 0 && static_cast<std::size_t>(cls) < image_label.size(),
          "qualify_negative_ws: bad class");
  return image_label[cls] == 0 || cam_value < beta;
}

std::vector<std::vector<std::size_t>> collect_anchors_ss(const LabelMap& labels, const ProbMap& prob,
                                                         double delta_p, bool labeled,
                                                         const FloatTensor* entropy, double gamma) {
  const std::size_t c = prob.inner();
  require(labels.size() * c == prob.size(), "collect_anchors: label/prob shape mismatch");
  require(labeled || (entropy != nullptr && entropy->size() == labels.size()),
          "collect_anchors: unlabeled batches need the entropy map");
  std::vector<std::vector<std::size_t>> anchors(c);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const std::int32_t y = labels[p];
    if (y == kIgnore) continue;
    require(y >= 0 && static_cast<std::size_t>(y) < c, "collect_anchors: label out of range");
    if (!(prob[p * c + y] > delta_p)) continue;
    if (!labeled && !((*entropy)[p] < gamma)) continue;
    anchors[y].push_back(p);
  }
  return anchors;
}

MemoryBank::MemoryBank(std::vector<std::size_t> capacities, std::size_t dim)
    : capacities_(std::move(capacities)), dim_(dim), queues_(capacities_.size()) {}

std::vector<std::size_t> MemoryBank::sizes() const {
  std::vector<std::size_t> s;
  for (const auto& q : queues_) s.push_back(q.size());
  return s;
}

void MemoryBank::evict(std::size_t cls) {
  auto& q = queues_[cls];
  while (q.size() > capacities_[cls]) q.pop_front();
}

void MemoryBank::push(std::size_t cls, BankEntry entry) {
  require(cls < queues_.size(), "bank_push: class out of range");
  require(entry.key.size() == dim_, "bank_push: key dimension mismatch");
  queues_[cls].push_back(std::move(entry));
  evict(cls);
}

void MemoryBank::push(std::size_t cls, const FloatTensor& keys, std::span<const std::uint64_t> tags) {
  require(cls < queues_.size(), "bank_push: class out of range");
  if (keys.empty()) return;
  require(keys.rank() == 2 && keys.dim(1) == dim_, "bank_push: key dimension mismatch");
  const std::size_t n = keys.dim(0);
  require(tags.empty() || tags.size() == n, "bank_push: one tag per key");
  // Keys that would be evicted within this same push are skipped.
  const std::size_t first = n > capacities_[cls] ? n - capacities_[cls] : 0;
  auto& q = queues_[cls];
  for (std::size_t i = first; i < n; ++i) {
    const auto row = keys.row(i);
    q.push_back({std::vector<double>(row.begin(), row.end()), tags.empty() ? 0 : tags[i]});
  }
  evict(cls);
}

std::vector<BankEntry> MemoryBank::sample(std::size_t cls, std::size_t n, Rng& rng) const {
  const auto& q = queues_.at(cls);
  std::vector<BankEntry> out;
  for (std::size_t i : sample_indices(q.size(), n, rng)) out.push_back(q[i]);
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t pool, std::size_t m, Rng& rng) {
  std::vector<std::size_t> out;
  if (pool == 0 || m == 0) return out;
  if (pool >= m) {
    // Partial Fisher-Yates over an index permutation.
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + rng.below(pool - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    return idx;
  }
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(rng.below(pool));
  return out;
}

std::vector<std::size_t> sample_anchors(std::span<const std::size_t> candidates, std::size_t m,
                                        Rng& rng) {
  std::vector<std::size_t> out;
  for (std::size_t i : sample_indices(candidates.size(), m, rng)) out.push_back(candidates[i]);
  return out;
}

}  // namespace u2pl
