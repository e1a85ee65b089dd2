#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "test_support.hpp"
#include "yolortho/error.hpp"
#include "yolortho/postprocess.hpp"

using namespace yolortho;
using namespace yolortho::post;
using yolortho::testing::brute_force_min_cost;
using yolortho::testing::has_duplicate_fdi;
using yolortho::testing::peaked_detection;
using yolortho::testing::random_cost_matrix;
using yolortho::testing::random_detection;

namespace {

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

// Exhaustive search returning the lexicographically smallest optimal
// matching. Exact only for integer-valued costs.
Pairs brute_force_lexmin(const CostMatrix& c) {
  const std::size_t n = c.rows(), m = c.cols();
  const bool rows_small = n <= m;
  const std::size_t large = rows_small ? m : n, small = rows_small ? n : m;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  Pairs best_pairs;
  do {
    Pairs p;
    double s = 0.0;
    for (std::size_t i = 0; i < small; ++i) {
      if (rows_small) p.emplace_back(i, perm[i]);
      else p.emplace_back(perm[i], i);
      s += c(p.back().first, p.back().second);
    }
    std::sort(p.begin(), p.end());
    if (s < best || (s == best && p < best_pairs)) {
      best = s;
      best_pairs = p;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best_pairs;
}

std::vector<std::pair<BoundingBox, int>> labelled(const std::vector<Detection>& dets) {
  std::vector<std::pair<BoundingBox, int>> out;
  for (const auto& d : dets) out.emplace_back(d.box, d.assigned_fdi ? d.assigned_fdi->code() : 0);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first.x_min, a.first.y_min, a.first.x_max, a.first.y_max, a.second) <
           std::tie(b.first.x_min, b.first.y_min, b.first.x_max, b.first.y_max, b.second);
  });
  return out;
}

BoundingBox row_box(double x) { return {x, 0.0, x + 10.0, 10.0}; }

}  // namespace

TEST_SUITE("postprocess") {
  TEST_CASE("solve_assignment examples") {
    const Matching a = solve_assignment(CostMatrix(2, 2, {1, 2, 3, 1}));
    CHECK(a.pairs == Pairs{{0, 0}, {1, 1}});
    CHECK(a.total_cost == 2.0);

    const Matching b = solve_assignment(CostMatrix(3, 3, 0.0));
    CHECK(b.pairs == Pairs{{0, 0}, {1, 1}, {2, 2}});
    CHECK(b.total_cost == 0.0);

    const Matching c = solve_assignment(CostMatrix(2, 3, {5, 1, 9, 1, 9, 9}));
    CHECK(c.pairs == Pairs{{0, 1}, {1, 0}});
    CHECK(c.total_cost == 2.0);
  }

  TEST_CASE("solve_assignment matches brute force on random matrices") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> dim(1, 7);
    for (int t = 0; t < 300; ++t) {
      const std::size_t r = dim(rng), c = dim(rng);
      const bool integer = t % 2 == 0;
      const CostMatrix m = random_cost_matrix(rng, r, c, integer);
      const Matching got = solve_assignment(m);
      REQUIRE(got.pairs.size() == std::min(r, c));
      std::vector<bool> rows(r), cols(c);
      double sum = 0.0;
      for (auto [i, k] : got.pairs) {
        CHECK_FALSE(rows[i]);
        CHECK_FALSE(cols[k]);
        rows[i] = cols[k] = true;
        sum += m(i, k);
      }
      CHECK(sum == doctest::Approx(got.total_cost).epsilon(1e-12));
      if (integer) {
        CHECK(got.total_cost == brute_force_min_cost(m));
        CHECK(got.pairs == brute_force_lexmin(m));
      } else {
        CHECK(got.total_cost == doctest::Approx(brute_force_min_cost(m)).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("adding a constant to a row keeps the matching") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    std::uniform_int_distribution<int> shift(-5, 5);
    for (int t = 0; t < 100; ++t) {
      const std::size_t r = dim(rng), c = std::max(r, dim(rng));
      CostMatrix m = random_cost_matrix(rng, r, c, true);
      const Matching base = solve_assignment(m);
      const std::size_t row = rng() % r;
      const int k = shift(rng);
      for (std::size_t j = 0; j < c; ++j) m(row, j) += k;
      const Matching shifted = solve_assignment(m);
      CHECK(shifted.pairs == base.pairs);
      CHECK(shifted.total_cost == base.total_cost + k);
    }
  }

  TEST_CASE("non-finite costs are rejected") {
    CostMatrix m(2, 2, 0.5);
    m(1, 0) = std::nan("");
    CHECK_THROWS_AS(solve_assignment(m), Error);
    m(1, 0) = std::numeric_limits<double>::infinity();
    try {
      solve_assignment(m);
      FAIL("expected NonFiniteCost");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NonFiniteCost);
    }
  }

  TEST_CASE("cost matrix entries") {
    Detection d = peaked_detection(row_box(0), 3, 0.8, 0.0);
    const CostMatrix one = build_cost_matrix(std::span(&d, 1));
    CHECK(one.rows() == 1);
    CHECK(one.cols() == 32);
    CHECK(one(0, 3) == doctest::Approx(0.2));
    CHECK(one(0, 4) == 1.0);
    const CostMatrix nl = build_cost_matrix(std::span(&d, 1), CostKind::NegLog);
    CHECK(nl(0, 3) == doctest::Approx(-std::log(0.8)));
    CHECK(std::isfinite(nl(0, 4)));
  }

  TEST_CASE("nms examples") {
    const BoundingBox box{0, 0, 10, 10};
    Detection a = peaked_detection(box, 0, 0.9), b = peaked_detection(box, 1, 0.8);
    auto out = nms(std::vector<Detection>{b, a}, 0.7, 0.25);
    REQUIRE(out.size() == 1);
    CHECK(out[0].confidence == 0.9);

    out = nms(std::vector<Detection>{peaked_detection({0, 0, 10, 10}, 0, 0.9),
                                     peaked_detection({20, 0, 30, 10}, 0, 0.8)},
              0.7, 0.25);
    CHECK(out.size() == 2);

    // Chain: A~B and B~C at 0.8 but A~C only 70/110. Greedy keeps A, drops B,
    // and C survives because its only suppressor was B.
    const Detection A = peaked_detection({0, 0, 90, 1}, 0, 0.9);
    const Detection B = peaked_detection({10, 0, 100, 1}, 1, 0.8);
    const Detection C = peaked_detection({20, 0, 110, 1}, 2, 0.7);
    CHECK(box_iou(A.box, B.box) == doctest::Approx(0.8));
    CHECK(box_iou(B.box, C.box) == doctest::Approx(0.8));
    CHECK(box_iou(A.box, C.box) == doctest::Approx(70.0 / 110.0));
    out = nms(std::vector<Detection>{C, A, B}, 0.7, 0.25);
    REQUIRE(out.size() == 2);
    CHECK(out[0].box == A.box);
    CHECK(out[1].box == C.box);

    // Confidence filter and sorting.
    out = nms(std::vector<Detection>{peaked_detection(row_box(0), 0, 0.3), peaked_detection(row_box(50), 0, 0.2),
                                     peaked_detection(row_box(100), 0, 0.6)},
              0.7, 0.25);
    REQUIRE(out.size() == 2);
    CHECK(out[0].confidence == 0.6);
    CHECK(out[1].confidence == 0.3);
    CHECK(nms(std::vector<Detection>{}, 0.7, 0.25).empty());
    CHECK_THROWS_AS(nms(std::vector<Detection>{A}, 1.5, 0.25), Error);
    CHECK_THROWS_AS(nms(std::vector<Detection>{A}, 0.5, -0.1), Error);
  }

  TEST_CASE("nms is idempotent and never keeps overlapping pairs") {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 100; ++t) {
      std::vector<Detection> dets;
      for (int i = 0; i < 30; ++i) dets.push_back(random_detection(rng, 128, 64));
      const auto once = nms(dets, 0.5, 0.25);
      CHECK(nms(once, 0.5, 0.25) == once);
      for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(once[i].confidence >= 0.25);
        if (i) CHECK(once[i - 1].confidence >= once[i].confidence);
        for (std::size_t j = i + 1; j < once.size(); ++j) CHECK(box_iou(once[i].box, once[j].box) <= 0.5);
      }
    }
  }

  TEST_CASE("enumeration correction examples") {
    Detection a = peaked_detection(row_box(0), 0, 0.9, 0.0);
    a.class_probs[1] = 0.1;
    Detection b = peaked_detection(row_box(20), 0, 0.6, 0.0);
    b.class_probs[1] = 0.35;
    const auto out = correct_enumeration(std::vector<Detection>{a, b});
    REQUIRE(out.size() == 2);
    CHECK(out[0].assigned_fdi->code() == 11);
    CHECK(out[1].assigned_fdi->code() == 12);
    CHECK(out[0].class_probs == a.class_probs);
    CHECK(out[1].box == b.box);

    const auto single = correct_enumeration(std::vector<Detection>{peaked_detection(row_box(0), 17, 0.7)});
    REQUIRE(single.size() == 1);
    CHECK(single[0].assigned_fdi == fdi_from_class_index(17));
    CHECK(correct_enumeration(std::vector<Detection>{}).empty());
  }

  TEST_CASE("distinct argmax classes are kept") {
    std::mt19937_64 rng(14);
    for (int t = 0; t < 200; ++t) {
      std::vector<int> classes(32);
      std::iota(classes.begin(), classes.end(), 0);
      std::shuffle(classes.begin(), classes.end(), rng);
      const int n = 1 + static_cast<int>(rng() % 32);
      std::vector<Detection> dets;
      for (int i = 0; i < n; ++i) {
        Detection d = random_detection(rng);
        std::uniform_real_distribution<double> u(0.0, 0.5);
        for (double& p : d.class_probs) p = u(rng);
        d.class_probs[classes[i]] = 0.5 + u(rng);
        dets.push_back(d);
      }
      const auto out = correct_enumeration(dets);
      REQUIRE(out.size() == dets.size());
      for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].assigned_fdi == fdi_from_class_index(dets[i].argmax_class()));
    }
  }

  TEST_CASE("enumeration correction is unique, count preserving and relabel only") {
    std::mt19937_64 rng(15);
    for (int t = 0; t < 200; ++t) {
      const int n = 1 + static_cast<int>(rng() % 40);
      std::vector<Detection> dets;
      for (int i = 0; i < n; ++i) dets.push_back(random_detection(rng));
      const auto out = correct_enumeration(dets);
      CHECK_FALSE(has_duplicate_fdi(out));
      CHECK(out.size() == static_cast<std::size_t>(std::min(n, 32)));
      // Survivors keep input order and every field except the label.
      std::size_t j = 0;
      for (const Detection& d : out) {
        while (j < dets.size() && !(dets[j].box == d.box)) ++j;
        REQUIRE(j < dets.size());
        Detection copy = d;
        copy.assigned_fdi = dets[j].assigned_fdi;
        CHECK(copy == dets[j]);
        REQUIRE(d.assigned_fdi.has_value());
        ++j;
      }
    }
  }

  TEST_CASE("enumeration correction total cost matches brute force on small sets") {
    std::mt19937_64 rng(16);
    for (int t = 0; t < 50; ++t) {
      // Restrict mass to 6 classes so the brute force stays tiny.
      const int n = 1 + static_cast<int>(rng() % 5);
      std::vector<Detection> dets;
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int i = 0; i < n; ++i) {
        Detection d = random_detection(rng);
        d.class_probs.fill(0.0);
        for (int k = 0; k < 6; ++k) d.class_probs[k] = u(rng);
        dets.push_back(d);
      }
      CostMatrix small(n, 6);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < 6; ++k) small(i, k) = 1.0 - dets[i].class_probs[k];
      const auto out = correct_enumeration(dets);
      double got = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) got += 1.0 - dets[i].class_probs[class_index(*out[i].assigned_fdi)];
      CHECK(got == doctest::Approx(brute_force_min_cost(small)).epsilon(1e-12));
    }
  }

  TEST_CASE("enumeration correction is invariant to input order") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 100; ++t) {
      const int n = 1 + static_cast<int>(rng() % 40);
      std::vector<Detection> dets;
      for (int i = 0; i < n; ++i) dets.push_back(random_detection(rng));
      // Ties make the invariance non-trivial.
      if (n > 2) dets[1].class_probs = dets[0].class_probs;
      const auto base = labelled(correct_enumeration(dets));
      std::shuffle(dets.begin(), dets.end(), rng);
      CHECK(labelled(correct_enumeration(dets)) == base);
    }
  }

  TEST_CASE("more than 32 detections drops the costliest") {
    std::vector<Detection> dets;
    for (int i = 0; i < 34; ++i) dets.push_back(peaked_detection(row_box(20.0 * i), i % 32, i < 32 ? 0.9 : 0.2));
    const auto out = correct_enumeration(dets);
    CHECK(out.size() == 32);
    CHECK_FALSE(has_duplicate_fdi(out));
    for (int i = 0; i < 32; ++i) CHECK(out[i].box == dets[i].box);
  }

  TEST_CASE("apply runs nms then relabels") {
    std::vector<Detection> dets = {peaked_detection(row_box(0), 0, 0.9), peaked_detection(row_box(1), 0, 0.85),
                                   peaked_detection(row_box(40), 0, 0.8)};
    PostConfig cfg;
    auto out = post::apply(dets, cfg);
    REQUIRE(out.size() == 2);
    CHECK_FALSE(has_duplicate_fdi(out));
    CHECK(post::apply(out, cfg) == out);
    cfg.enumeration = false;
    out = post::apply(dets, cfg);
    REQUIRE(out.size() == 2);
    CHECK(out[0].assigned_fdi == out[1].assigned_fdi);
    CHECK(assign_argmax(dets)[2].assigned_fdi->code() == 11);
  }

  TEST_CASE("40 by 32 instances are fast") {
    std::mt19937_64 rng(18);
    std::vector<Detection> dets;
    for (int i = 0; i < 40; ++i) dets.push_back(random_detection(rng));
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < 20; ++r) (void)correct_enumeration(dets);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / 20;
    CHECK(ms < 10.0);
  }
}
