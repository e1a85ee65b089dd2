#include <cmath>
#include <random>

#include "doctest.h"
#include "yolortho/augment.hpp"
#include "yolortho/error.hpp"

using namespace yolortho;
using namespace yolortho::augment;

namespace {

// Random sample with boxes on a 1/16 px grid so mirrored coordinates are exact.
Sample random_sample(std::mt19937_64& rng, int w = 64, int h = 48) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sample s;
  s.image = Image(w, h);
  for (double& p : s.image.pixels) p = u(rng);
  const int n = 1 + static_cast<int>(u(rng) * 6);
  auto grid = [](double v) { return std::round(v * 16.0) / 16.0; };
  for (int i = 0; i < n; ++i) {
    const double x0 = grid(u(rng) * (w - 10)), y0 = grid(u(rng) * (h - 10));
    const BoundingBox b{x0, y0, x0 + grid(2 + u(rng) * 8), y0 + grid(2 + u(rng) * 8)};
    if (u(rng) < 0.2) {
      ToothRecord r;
      r.box = b;
      r.quadrant = 1 + static_cast<int>(u(rng) * 4);
      s.records.push_back(r);
    } else {
      AttributeFlags a;
      for (auto& f : a.values) f = u(rng) < 0.3;
      s.records.push_back(make_record(b, fdi_from_class_index(static_cast<int>(u(rng) * 32)), a));
    }
  }
  return s;
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace

TEST_SUITE("augment") {
  TEST_CASE("horizontal flip example") {
    Sample s;
    s.image = Image(100, 50);
    AttributeFlags a;
    a[Attribute::IsImpacted] = true;
    s.records.push_back(make_record({10, 20, 30, 40}, FDILabel::from_code(14), a));
    const Sample f = horizontal_flip(s);
    REQUIRE(f.records.size() == 1);
    CHECK(f.records[0].box == BoundingBox{70, 20, 90, 40});
    CHECK(f.records[0].fdi->code() == 24);
    CHECK(f.records[0].quadrant == 2);
    CHECK(f.records[0].attributes == a);
  }

  TEST_CASE("horizontal flip mirrors pixels and remaps quadrant-only records") {
    Sample s;
    s.image = Image(3, 1);
    s.image.pixels = {0.1, 0.2, 0.3};
    ToothRecord q;
    q.box = {0, 0, 1, 1};
    q.quadrant = 3;
    s.records.push_back(q);
    const Sample f = horizontal_flip(s);
    CHECK(f.image.pixels == std::vector<double>{0.3, 0.2, 0.1});
    CHECK(f.records[0].quadrant == 4);
    CHECK_FALSE(f.records[0].fdi.has_value());
  }

  TEST_CASE("flip twice is bit-identical and preserves areas") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
      const Sample s = random_sample(rng);
      const Sample f = horizontal_flip(s);
      for (std::size_t k = 0; k < s.records.size(); ++k) CHECK(f.records[k].box.area() == s.records[k].box.area());
      CHECK(horizontal_flip(f).image == s.image);
      CHECK(horizontal_flip(f).records == s.records);
    }
  }

  TEST_CASE("identity configuration leaves the sample unchanged") {
    std::mt19937_64 rng(4);
    const Sample s = random_sample(rng);
    const Sample out = apply_augmentations(s, AugmentConfig::identity(), 1234);
    CHECK(out.image == s.image);
    CHECK(out.records == s.records);
  }

  TEST_CASE("same seed gives identical output") {
    std::mt19937_64 rng(5);
    const Sample s = random_sample(rng);
    const AugmentConfig cfg;
    const Sample a = apply_augmentations(s, cfg, 99);
    const Sample b = apply_augmentations(s, cfg, 99);
    CHECK(a.image == b.image);
    CHECK(a.records == b.records);
  }

  TEST_CASE("pure translation shifts boxes and clips at the border") {
    Sample s;
    s.image = Image(100, 50, 0.5);
    s.records.push_back(make_record({10, 5, 20, 15}, FDILabel::from_code(11)));
    s.records.push_back(make_record({80, 5, 95, 15}, FDILabel::from_code(12)));
    const Sample t = affine_transform(s, {1.0, 0.0, 10.0, 0.0}, 0.25);
    REQUIRE(t.records.size() == 2);
    CHECK(near(t.records[0].box.x_min, 20, 1e-9));
    CHECK(near(t.records[0].box.x_max, 30, 1e-9));
    CHECK(near(t.records[0].box.y_min, 5, 1e-9));
    CHECK(near(t.records[1].box.x_min, 90, 1e-9));
    CHECK(t.records[1].box.x_max == 100.0);
    // pixels moved by 10 too
    CHECK(t.image.at(5, 10) == 0.0);
    CHECK(near(t.image.at(50, 10), 0.5, 1e-12));
  }

  TEST_CASE("boxes pushed mostly outside the image are dropped") {
    Sample s;
    s.image = Image(100, 50);
    s.records.push_back(make_record({80, 5, 100, 15}, FDILabel::from_code(11)));
    const Sample t = affine_transform(s, {1.0, 0.0, 17.0, 0.0}, 0.25);  // 3 of 20 px remain
    CHECK(t.records.empty());
  }

  TEST_CASE("transformed boxes are the hull of the transformed corners") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      Sample s;
      s.image = Image(80, 60);
      const BoundingBox b{30 + 5 * u(rng), 20 + 5 * u(rng), 45 + 5 * u(rng), 35 + 5 * u(rng)};
      s.records.push_back(make_record(b, FDILabel::from_code(21)));
      const AffineParams p{1.0 + 0.2 * u(rng), 10.0 * u(rng), 4.0 * u(rng), 4.0 * u(rng)};
      const Sample t = affine_transform(s, p, 0.0);
      REQUIRE(t.records.size() == 1);
      // Independent corner mapping about the image center.
      const double cx = 40.0, cy = 30.0, th = p.rotate_deg * M_PI / 180.0;
      const double c = std::cos(th) * p.scale, sn = std::sin(th) * p.scale;
      double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
      for (double x : {b.x_min, b.x_max}) {
        for (double y : {b.y_min, b.y_max}) {
          const double dx = x - cx, dy = y - cy;
          const double X = c * dx - sn * dy + cx + p.translate_x;
          const double Y = sn * dx + c * dy + cy + p.translate_y;
          x0 = std::min(x0, X);
          y0 = std::min(y0, Y);
          x1 = std::max(x1, X);
          y1 = std::max(y1, Y);
        }
      }
      const BoundingBox hull = clip_box({x0, y0, x1, y1}, 80, 60);
      CHECK(near(t.records[0].box.x_min, hull.x_min, 1e-6));
      CHECK(near(t.records[0].box.y_min, hull.y_min, 1e-6));
      CHECK(near(t.records[0].box.x_max, hull.x_max, 1e-6));
      CHECK(near(t.records[0].box.y_max, hull.y_max, 1e-6));
    }
  }

  TEST_CASE("degenerate transforms are rejected") {
    Sample s;
    s.image = Image(10, 10);
    try {
      affine_transform(s, {0.0, 0.0, 0.0, 0.0}, 0.25);
      FAIL("expected DegenerateTransform");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DegenerateTransform);
    }
    AugmentConfig cfg;
    cfg.scale = 1.0;
    CHECK_THROWS_AS(apply_augmentations(s, cfg, 1), Error);
  }

  TEST_CASE("gaussian blur keeps constant images constant") {
    const Image flat(12, 9, 0.4);
    const Image b = gaussian_blur(flat, 1.0);
    for (double p : b.pixels) CHECK(p == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(gaussian_blur(flat, 0.0) == flat);
  }
}
