#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "test_util.hpp"
#include "u2pl/cam.hpp"

using namespace u2pl;

TEST_CASE("one-hot classifier row selects a feature channel") {
  Rng rng(1);
  const auto feats = testutil::random_tensor({4, 5, 3}, rng);
  FloatTensor w({2, 3});
  w.data = {0, 1, 0, 0, 0, 1};
  const auto cam = compute_cam(feats, w);
  std::vector<double> ch(20);
  for (std::size_t i = 0; i < 20; ++i) ch[i] = std::max(0.0, feats.row(i)[1]);
  const auto expected = minmax_normalize(ch);
  for (std::size_t i = 0; i < 20; ++i) CHECK(cam.row(i)[0] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("all-negative activation gives a zero map") {
  FloatTensor feats({3, 3, 2}, 1.0);
  FloatTensor w({1, 2}, -1.0);
  for (double v : compute_cam(feats, w).data) CHECK(v == 0.0);
}

TEST_CASE("scaling a classifier row leaves its map unchanged") {
  Rng rng(2);
  const auto feats = testutil::random_tensor({6, 6, 4}, rng);
  auto w = testutil::random_tensor({3, 4}, rng);
  const auto a = compute_cam(feats, w);
  for (double& v : w.row(1)) v *= 2.0;
  const auto b = compute_cam(feats, w);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
  for (double v : a.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("cam_pseudo_labels examples") {
  const std::vector<std::uint8_t> present{1, 1, 1, 0};
  FloatTensor low({2, 2, 4}, 0.3);
  for (int v : cam_pseudo_labels(low, present, 0.7).data) CHECK(v == 0);

  FloatTensor one({1, 3, 4});
  one.row(1)[1] = 0.9;
  const auto l = cam_pseudo_labels(one, present, 0.7);
  CHECK(l.data == std::vector<int>{0, 1, 0});

  FloatTensor two({1, 3, 4});
  two.row(0)[1] = 0.9;
  two.row(0)[2] = 0.8;
  two.row(1)[1] = 0.8;
  two.row(1)[2] = 0.8;
  two.row(2)[3] = 1.0;  // absent class never wins
  CHECK(cam_pseudo_labels(two, present, 0.7).data == std::vector<int>{1, 1, 0});
  CHECK_THROWS_AS(cam_pseudo_labels(two, present, 1.0), ContractError);
}

TEST_CASE("cam pseudo-labels never contain absent classes") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto cams = testutil::uniform_tensor({5, 5, 6}, rng);
    std::vector<std::uint8_t> present(6);
    present[0] = 1;
    for (std::size_t c = 1; c < 6; ++c) present[c] = static_cast<std::uint8_t>(rng.below(2));
    const auto l = cam_pseudo_labels(cams, present, 0.5);
    for (std::size_t p = 0; p < l.size(); ++p) {
      REQUIRE(present[l[p]] == 1);
      if (l[p] != 0) {
        double best = 0.0;
        for (std::size_t c = 1; c < 6; ++c) {
          if (present[c]) best = std::max(best, cams.row(p)[c]);
        }
        CHECK(cams.row(p)[l[p]] == best);
      }
    }
  }
}

TEST_CASE("background channel becomes the foreground complement") {
  FloatTensor cams({1, 2, 3});
  cams.data = {0.5, 0.2, 0.9, 0.5, 0.6, 0.1};
  set_background_cam(cams, std::vector<std::uint8_t>{1, 1, 0});
  CHECK(cams.row(0)[0] == doctest::Approx(0.8));
  CHECK(cams.row(1)[0] == doctest::Approx(0.4));
  FloatTensor none({1, 1, 3}, 0.7);
  set_background_cam(none, std::vector<std::uint8_t>{1, 0, 0});
  CHECK(none[0] == 1.0);
}
