#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "u2pl/cam.hpp"
#include "u2pl/datagen.hpp"
#include "u2pl/losses.hpp"
#include "u2pl/metrics.hpp"
#include "u2pl/model.hpp"
#include "u2pl/pairs.hpp"
#include "u2pl/proto.hpp"
#include "u2pl/pseudo.hpp"
#include "u2pl/trainer.hpp"

using namespace u2pl;

namespace {

constexpr int kTrials = 200;

std::vector<double> random_simplex(std::size_t c, Rng& rng) {
  const auto p = testutil::random_prob(1, c, rng);
  return p.data;
}

}  // namespace

TEST_CASE("softmax of log recovers interior simplex points") {
  Rng rng(1);
  for (int t = 0; t < kTrials; ++t) {
    const auto p = random_simplex(2 + rng.below(6), rng);
    std::vector<double> logp;
    for (double v : p) logp.push_back(std::log(v));
    const auto q = softmax(logp);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(q[i] - p[i]) <= 1e-12);
  }
}

TEST_CASE("entropy is permutation invariant") {
  Rng rng(2);
  for (int t = 0; t < kTrials; ++t) {
    auto p = random_simplex(2 + rng.below(6), rng);
    const double h = entropy(p);
    rng.shuffle(p.begin(), p.end());
    CHECK(entropy(p) == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("quantile threshold is non-increasing in alpha") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(1 + rng.below(40));
    for (double& x : v) x = rng.uniform();
    double prev = quantile_threshold(v, 0.0);
    for (int k = 1; k <= 100; ++k) {
      const double cur = quantile_threshold(v, k / 100.0);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
}

TEST_CASE("category order is a permutation and minmax stays in the unit interval") {
  Rng rng(4);
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t c = 1 + rng.below(8);
    const auto p = random_simplex(c, rng);
    auto order = category_order(p);
    std::sort(order.begin(), order.end());
    std::vector<int> expected(c);
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(order == expected);

    std::vector<double> m(1 + rng.below(30));
    for (double& x : m) x = 10.0 * rng.normal();
    for (double x : minmax_normalize(m)) CHECK((x >= 0.0 && x <= 1.0));
  }
}

TEST_CASE("scene round-trips through the dataset files") {
  DatasetSpec spec;
  spec.scene.height = 16;
  spec.scene.width = 16;
  spec.scene.min_shape_size = 3;
  spec.scene.max_shape_size = 8;
  spec.n_train = 6;
  spec.n_val = 2;
  spec.seed = 9;
  for (Regime r : {Regime::ss, Regime::da, Regime::ws}) {
    spec.regime = r;
    const Dataset ds = generate_dataset(spec);
    const auto dir = std::filesystem::temp_directory_path() / "u2pl_props_ds";
    std::filesystem::remove_all(dir);
    write_dataset(dir, ds);
    const Dataset back = read_dataset(dir);
    CHECK(back.manifest == ds.manifest);
    for (const auto& [id, scene] : ds.scenes) {
      const Scene& b = back.scene(id);
      CHECK(b.image == scene.image);
      CHECK(b.image_label == scene.image_label);
      if (r != Regime::ws || std::ranges::find(ds.manifest.val_ids, id) != ds.manifest.val_ids.end()) {
        CHECK(b.label == scene.label);
      }
    }
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("splits partition the generated ids") {
  Rng rng(5);
  for (int t = 0; t < kTrials; ++t) {
    const int n_train = 4 + static_cast<int>(rng.below(60));
    const int n_val = static_cast<int>(rng.below(20));
    const auto m = make_splits(n_train, n_val, 0.25 + 0.5 * rng.uniform(), Regime::ss, rng.below(1000));
    std::vector<int> all = m.labeled_ids;
    all.insert(all.end(), m.unlabeled_ids.begin(), m.unlabeled_ids.end());
    all.insert(all.end(), m.val_ids.begin(), m.val_ids.end());
    std::sort(all.begin(), all.end());
    std::vector<int> expected(static_cast<std::size_t>(n_train + n_val));
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(all == expected);
  }
}

TEST_CASE("flip moves labels together with pixels") {
  SceneSpec spec;
  spec.height = 16;
  spec.width = 19;
  spec.min_shape_size = 3;
  spec.max_shape_size = 8;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene s = generate_scene(seed, spec);
    const Scene f = flip_horizontal(s);
    CHECK(flip_horizontal(f) == s);
    // Pixel colours and labels land in the same mirrored location.
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const std::size_t a = static_cast<std::size_t>(y * spec.width + x);
        const std::size_t b = static_cast<std::size_t>(y * spec.width + (spec.width - 1 - x));
        CHECK(f.label[b] == s.label[a]);
        CHECK(f.image[3 * b] == s.image[3 * a]);
      }
    }
    CHECK(miou(f.label, flip_horizontal(s).label, 6).miou == 1.0);
  }
}

TEST_CASE("forward is deterministic and stays on the simplex") {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const auto p = init_params(rng.below(1000), ModelSpec{4, 3, 4});
    const auto img = testutil::uniform_tensor({5, 7, 3}, rng);
    const auto a = forward(p, img);
    const auto b = forward(p, img);
    CHECK(a.logits == b.logits);
    CHECK(a.repr == b.repr);
    CHECK(a.cls_logits == b.cls_logits);
    for (std::size_t i = 0; i < 35; ++i) {
      const auto row = a.prob.row(i);
      CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("lowering gamma never labels an ignored pixel") {
  Rng rng(7);
  for (int t = 0; t < kTrials; ++t) {
    const auto prob = testutil::random_prob(30, 2 + rng.below(5), rng, 3.0);
    const auto h = entropy_map(prob);
    const double g1 = rng.uniform() * 2.0;
    const double g0 = g1 * rng.uniform();
    const auto hi = assign_pseudo_labels(prob, g1);
    const auto lo = assign_pseudo_labels(prob, g0);
    for (std::size_t p = 0; p < 30; ++p) {
      if (hi[p] == kIgnore) CHECK(lo[p] == kIgnore);
      // Reliable and unreliable partition the pixels.
      CHECK((h[p] < g1) != (h[p] >= g1));
      CHECK((hi[p] == kIgnore) == (h[p] >= g1));
    }
  }
}

TEST_CASE("dpa alpha is affine in the epoch") {
  for (int total = 2; total <= 40; ++total) {
    for (int a = 0; a <= total; ++a) {
      for (int b = a; b <= total; b += 2) {
        const double lhs = dpa_alpha(0.2, a, total) + dpa_alpha(0.2, b, total);
        CHECK(lhs == doctest::Approx(2.0 * dpa_alpha(0.2, (a + b) / 2, total)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("unreliable fraction tracks alpha within one quantile cell") {
  Rng rng(8);
  for (int t = 0; t < kTrials; ++t) {
    const std::size_t n = 1 + rng.below(200);
    const auto prob = testutil::random_prob(n, 2 + rng.below(5), rng, 2.0);
    const auto h = entropy_map(prob);
    const double alpha = rng.uniform() * 0.5;
    const double gamma = compute_gamma(h.data, alpha);
    std::size_t count = 0;
    for (double v : h.data) count += v >= gamma ? 1 : 0;
    const double frac = static_cast<double>(count) / static_cast<double>(n);
    CHECK(std::abs(frac - alpha) <= 1.0 / static_cast<double>(n) + 1e-12);
  }
}

TEST_CASE("prototype norm is bounded by the largest centroid norm") {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    PrototypeBank bank(1, 4);
    double largest = 0.0;
    const double m = rng.uniform();
    for (int k = 0; k < 30; ++k) {
      const auto c = testutil::random_tensor({4}, rng, 1.0 + 3.0 * rng.uniform());
      largest = std::max(largest, l2_norm(c.data));
      momentum_update(bank, 0, c.data, m);
      CHECK(l2_norm(bank.protos[0]) <= largest + 1e-12);
    }
  }
}

TEST_CASE("denoise weights are permutation equivariant and uniform weights are the identity") {
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 2 + rng.below(5);
    PrototypeBank bank(c, 3);
    for (std::size_t k = 0; k < c; ++k) momentum_update(bank, k, testutil::random_tensor({3}, rng).data, 0.5);
    const auto z = testutil::random_tensor({3}, rng);
    const auto w = denoise_weights(z.data, bank);
    std::vector<std::size_t> perm(c);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    PrototypeBank permuted(c, 3);
    for (std::size_t k = 0; k < c; ++k) momentum_update(permuted, k, bank.protos[perm[k]], 0.5);
    const auto wp = denoise_weights(z.data, permuted);
    for (std::size_t k = 0; k < c; ++k) CHECK(wp[k] == doctest::Approx(w[perm[k]]).epsilon(1e-12));

    const auto prob = testutil::random_prob(10, c, rng);
    const FloatTensor uniform({10, c}, 1.0 / static_cast<double>(c));
    const auto out = denoise_predictions(prob, uniform);
    for (std::size_t i = 0; i < prob.size(); ++i) CHECK(std::abs(out[i] - prob[i]) <= 1e-12);
  }
}

TEST_CASE("bank occupancy never exceeds capacity") {
  Rng rng(11);
  MemoryBank bank({5, 17, 1}, 2);
  for (int op = 0; op < 5000; ++op) {
    const std::size_t c = rng.below(3);
    const std::size_t n = rng.below(25);
    FloatTensor keys({n, 2});
    if (n > 0) bank.push(c, keys, {});
    const auto sizes = bank.sizes();
    for (std::size_t k = 0; k < 3; ++k) CHECK(sizes[k] <= bank.capacity(k));
  }
}

TEST_CASE("sampling is deterministic for a fixed seed") {
  Rng fill(12);
  MemoryBank bank({40}, 3);
  bank.push(0, testutil::random_tensor({40, 3}, fill), {});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    const auto x = bank.sample(0, 10, a);
    const auto y = bank.sample(0, 10, b);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].key == y[i].key);
  }
}

TEST_CASE("no pixel is both an anchor and a negative for one class") {
  Rng rng(13);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 2 + rng.below(4);
    const auto prob = testutil::random_prob(40, c, rng, 3.0);
    const auto labels = testutil::random_labels({40}, static_cast<int>(c), rng, 0.1);
    const auto h = entropy_map(prob);
    const double gamma = compute_gamma(h.data, 0.3);
    const auto pseudo = assign_pseudo_labels(prob, gamma);
    const auto la = collect_anchors_ss(labels, prob, 0.3, true);
    const auto ua = collect_anchors_ss(pseudo, prob, 0.3, false, &h, gamma);
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t p : la[k]) CHECK_FALSE(qualify_negative_labeled(labels[p], prob.row(p), k, 1));
      for (std::size_t p : ua[k]) {
        CHECK_FALSE(qualify_negative_unlabeled(h[p], gamma, prob.row(p), k, 1, static_cast<int>(c)));
      }
    }
  }
}

TEST_CASE("cross entropy with ignored pixels equals the retained submap") {
  Rng rng(14);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 2 + rng.below(3);
    const auto logits = testutil::random_tensor({12, c}, rng, 2.0);
    auto target = testutil::random_labels({12}, static_cast<int>(c), rng, 0.4);
    std::size_t kept = 0;
    for (int v : target.data) kept += v != kIgnore ? 1 : 0;
    if (kept == 0) target[0] = 0, kept = 1;
    FloatTensor sub_logits({kept, c});
    LabelMap sub_target({kept});
    std::size_t j = 0;
    for (std::size_t p = 0; p < 12; ++p) {
      if (target[p] == kIgnore) continue;
      std::copy(logits.row(p).begin(), logits.row(p).end(), sub_logits.row(j).begin());
      sub_target[j++] = target[p];
    }
    CHECK(cross_entropy(logits, target).value == doctest::Approx(cross_entropy(sub_logits, sub_target).value));
    const auto sce = symmetric_cross_entropy(logits, target, 1.0, 0.1, 1e-4);
    CHECK(sce.value >= 1.0 * cross_entropy(logits, target).value - 1e-12);
  }
}

TEST_CASE("infonce ignores positive scale and falls as the anchor turns toward the positive") {
  Rng rng(15);
  for (int t = 0; t < 100; ++t) {
    const auto anchors = testutil::random_tensor({3, 4}, rng);
    const auto pos = testutil::random_tensor({4}, rng);
    const auto neg = testutil::random_tensor({4, 4}, rng);
    auto scaled = pos;
    const double k = 0.01 + 100.0 * rng.uniform();
    for (double& v : scaled.data) v *= k;
    CHECK(infonce(anchors, scaled.data, neg, 0.5).value ==
          doctest::Approx(infonce(anchors, pos.data, neg, 0.5).value).epsilon(1e-12));

    // 2-D: negatives opposite the positive, anchor rotated toward it in equal steps.
    const double theta_p = 2.0 * M_PI * rng.uniform();
    const std::vector<double> p2{std::cos(theta_p), std::sin(theta_p)};
    FloatTensor n2({3, 2});
    for (std::size_t j = 0; j < 3; ++j) {
      const double len = 0.1 + rng.uniform();
      n2[2 * j] = -len * p2[0];
      n2[2 * j + 1] = -len * p2[1];
    }
    double prev = INFINITY;
    const double start = M_PI * (0.2 + 0.7 * rng.uniform());
    for (int s = 0; s <= 10; ++s) {
      const double angle = theta_p + start * (1.0 - s / 10.0);
      FloatTensor a({1, 2});
      a[0] = std::cos(angle);
      a[1] = std::sin(angle);
      const double v = infonce(a, p2, n2, 0.5).value;
      CHECK(v < prev);
      prev = v;
    }
  }
}

TEST_CASE("CAM labels respect presence and shrink as beta grows") {
  Rng rng(16);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 3 + rng.below(3);
    FloatTensor cams = testutil::uniform_tensor({5, 5, c}, rng);
    ByteTensor present({c});
    present[0] = 1;
    for (std::size_t k = 1; k < c; ++k) present[k] = rng.uniform() < 0.5 ? 1 : 0;
    const double b1 = rng.uniform();
    const double b2 = b1 + (1.0 - b1) * rng.uniform();
    const auto lo = cam_pseudo_labels(cams, present.data, b1);
    const auto hi = cam_pseudo_labels(cams, present.data, b2);
    for (std::size_t p = 0; p < 25; ++p) {
      CHECK(present[static_cast<std::size_t>(lo[p])] == 1);
      if (lo[p] == 0) CHECK(hi[p] == 0);
      for (std::size_t k = 1; k < c; ++k) {
        if (hi[p] == static_cast<int>(k)) CHECK(cams[p * c + k] > b2);
      }
    }
  }
}

TEST_CASE("alpha strictly decreases until it reaches zero") {
  for (int total = 1; total <= 50; ++total) {
    for (int e = 1; e <= total; ++e) CHECK(dpa_alpha(0.2, e, total) < dpa_alpha(0.2, e - 1, total));
    CHECK(dpa_alpha(0.2, total, total) == 0.0);
  }
}

TEST_CASE("miou matches the per-class set computation") {
  Rng rng(17);
  for (int t = 0; t < kTrials; ++t) {
    const int c = 2 + static_cast<int>(rng.below(4));
    const auto gt = testutil::random_labels({30}, c, rng, 0.1);
    const auto pred = testutil::random_labels({30}, c, rng);
    const auto r = miou(pred, gt, static_cast<std::size_t>(c));
    double sum = 0.0;
    int present = 0;
    for (int k = 0; k < c; ++k) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t p = 0; p < 30; ++p) {
        if (gt[p] == kIgnore) continue;
        const bool a = gt[p] == k, b = pred[p] == k;
        inter += a && b ? 1 : 0;
        uni += a || b ? 1 : 0;
      }
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / static_cast<double>(uni);
      ++present;
    }
    CHECK(r.miou == doctest::Approx(sum / present).epsilon(1e-12));
  }
}

TEST_CASE("reliable fraction is monotone in gamma") {
  Rng rng(18);
  for (int t = 0; t < 100; ++t) {
    const auto prob = testutil::random_prob(50, 4, rng);
    double prev = 2.0;
    for (int k = 0; k <= 20; ++k) {
      const double frac = reliability_stats(prob, 0.1 * k).unreliable_fraction;
      CHECK(frac <= prev);
      prev = frac;
    }
  }
}
