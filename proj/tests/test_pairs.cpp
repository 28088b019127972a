#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <deque>
#include <set>

#include "test_util.hpp"
#include "u2pl/pairs.hpp"

using namespace u2pl;

namespace {

FloatTensor keys(std::initializer_list<double> first_coords) {
  FloatTensor k({first_coords.size(), 2});
  std::size_t i = 0;
  for (double v : first_coords) k.row(i++)[0] = v;
  return k;
}

}  // namespace

TEST_CASE("anchor qualification examples") {
  LabelMap y({2});
  y.data = {1, 1};
  ProbMap p({2, 3});
  p.data = {0.05, 0.9, 0.05, 0.35, 0.3, 0.35};
  const auto a = collect_anchors_ss(y, p, 0.3, true);
  CHECK(a[1] == std::vector<std::size_t>{0});  // p(c) == 0.3 is excluded

  FloatTensor h({2});
  h.data = {0.2, 0.9};
  LabelMap pseudo({2});
  pseudo.data = {1, 1};
  ProbMap q({2, 3});
  q.data = {0.05, 0.9, 0.05, 0.05, 0.9, 0.05};
  const auto u = collect_anchors_ss(pseudo, q, 0.3, false, &h, 0.5);
  CHECK(u[1] == std::vector<std::size_t>{0});  // the unreliable pixel is dropped
}

TEST_CASE("labeled negative examples") {
  CHECK_FALSE(qualify_negative_labeled_rank(2, 0, 2, 3));
  CHECK(qualify_negative_labeled_rank(1, 0, 2, 3));
  CHECK_FALSE(qualify_negative_labeled_rank(1, 3, 2, 3));
  CHECK_FALSE(qualify_negative_labeled_rank(kIgnore, 0, 2, 3));
  CHECK(qualify_negative_labeled(0, std::vector<double>{0.2, 0.1, 0.7}, 2, 3));
}

TEST_CASE("unlabeled negative examples") {
  CHECK_FALSE(qualify_negative_unlabeled_rank(0.5, 0.5, 3, 3, 6));
  CHECK_FALSE(qualify_negative_unlabeled_rank(0.4, 0.5, 3, 3, 6));
  CHECK(qualify_negative_unlabeled_rank(0.6, 0.5, 3, 3, 6));
  CHECK_FALSE(qualify_negative_unlabeled_rank(0.6, 0.5, 2, 3, 6));
  CHECK_FALSE(qualify_negative_unlabeled_rank(0.6, 0.5, 6, 3, 6));
  CHECK(qualify_negative_unlabeled_reliable_rank(0.4, 0.5, 3, 3, 6));
  CHECK_FALSE(qualify_negative_unlabeled_reliable_rank(0.6, 0.5, 3, 3, 6));
}

TEST_CASE("weak negative examples") {
  const std::vector<std::uint8_t> y{1, 0, 1};
  CHECK(qualify_negative_ws(y, 0.99, 1, 0.7));
  CHECK_FALSE(qualify_negative_ws(y, 0.7, 2, 0.7));
  CHECK(qualify_negative_ws(y, 0.1, 2, 0.7));
}

TEST_CASE("bank push keeps the newest entries in order") {
  MemoryBank bank({5}, 2);
  bank.push(0, keys({1, 2, 3, 4, 5, 6, 7}));
  REQUIRE(bank.size(0) == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(bank.entries(0)[i].key[0] == 3.0 + i);
  const MemoryBank before = bank;
  bank.push(0, FloatTensor({0, 2}));
  CHECK(bank == before);
  CHECK_THROWS_AS(bank.push(0, FloatTensor({1, 3})), ContractError);
}

TEST_CASE("bank matches a queue simulation") {
  Rng rng(7);
  MemoryBank bank({4, 9}, 2);
  std::vector<std::deque<double>> sim(2);
  double next = 0;
  for (int op = 0; op < 2000; ++op) {
    const std::size_t c = rng.below(2);
    const std::size_t n = rng.below(12);
    FloatTensor k({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      k.row(i)[0] = next;
      sim[c].push_back(next++);
      if (sim[c].size() > bank.capacity(c)) sim[c].pop_front();
    }
    bank.push(c, k);
    REQUIRE(bank.size(c) == sim[c].size());
    for (std::size_t i = 0; i < sim[c].size(); ++i) REQUIRE(bank.entries(c)[i].key[0] == sim[c][i]);
  }
}

TEST_CASE("bank sampling policies") {
  Rng rng(3);
  MemoryBank bank({100, 100}, 2);
  bank.push(0, keys({1, 2, 3, 4, 5, 6, 7, 8}));
  const auto draws = bank.sample(0, 5, rng);
  std::set<double> distinct;
  for (const auto& e : draws) distinct.insert(e.key[0]);
  CHECK(distinct.size() == 5);
  CHECK(bank.sample(1, 5, rng).empty());
  MemoryBank single({4}, 2);
  single.push(0, keys({9}));
  const auto copies = single.sample(0, 50, rng);
  CHECK(copies.size() == 50);
  for (const auto& e : copies) CHECK(e.key[0] == 9.0);
}

TEST_CASE("anchor sampling") {
  Rng rng(5);
  const std::vector<std::size_t> pool{4, 8, 15, 16};
  auto all = sample_anchors(pool, 4, rng);
  std::sort(all.begin(), all.end());
  CHECK(all == pool);
  CHECK(sample_anchors(std::vector<std::size_t>{}, 4, rng).empty());
  for (int t = 0; t < 200; ++t) {
    for (std::size_t v : sample_anchors(pool, 1 + rng.below(10), rng)) {
      CHECK(std::find(pool.begin(), pool.end(), v) != pool.end());
    }
  }
}

TEST_CASE("sample_indices distribution is uniform") {
  Rng rng(11);
  std::vector<int> hits(10, 0);
  for (int t = 0; t < 5000; ++t) {
    for (std::size_t v : sample_indices(10, 3, rng)) ++hits[v];
  }
  for (int h : hits) CHECK(std::abs(h - 1500) < 150);
}
