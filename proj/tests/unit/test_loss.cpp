#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "yolortho/error.hpp"
#include "yolortho/loss.hpp"
#include "yolortho/network.hpp"
#include "yolortho/trainer.hpp"

using namespace yolortho;
using namespace yolortho::train;
using dataio::AnnotationTier;

namespace {

nn::ModelConfig tiny_config() {
  nn::ModelConfig c;
  c.input_size = 64;
  c.width_mult = 0.0625;
  c.depth_mult = 0.5;
  c.reg_max = 4;
  return c;
}

nn::RawPredictions random_raw(std::uint64_t seed, double scale = 1.0) {
  nn::Detector d(tiny_config());
  d.initialize(1);
  nn::RawPredictions raw = d.forward(Image(64, 64)).zeros_like();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& l : raw.levels) {
    for (double& v : l.dfl_logits) v = n(rng);
    for (double& v : l.class_logits) v = n(rng) - 2.0;
    for (double& v : l.attribute_logits) v = n(rng);
  }
  return raw;
}

std::vector<ToothRecord> records_for(AnnotationTier tier, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ToothRecord> out;
  for (int i = 0; i < 3; ++i) {
    const double x = 4 + 18 * i + 2 * u(rng), y = 8 + 10 * u(rng);
    const BoundingBox b{x, y, x + 10 + 4 * u(rng), y + 20 + 10 * u(rng)};
    ToothRecord r;
    r.box = b;
    r.quadrant = 1 + i;
    if (tier != AnnotationTier::Quadrant) r.fdi = FDILabel(1 + i, 1 + 2 * i);
    if (tier == AnnotationTier::Disease) {
      AttributeFlags a;
      for (auto& f : a.values) f = u(rng) < 0.5;
      r.attributes = a;
    }
    out.push_back(r);
  }
  return out;
}

struct LogitRef {
  int level;
  int kind;  // 0 dfl, 1 class, 2 attribute
  std::size_t index;
};

double& logit(nn::RawPredictions& r, const LogitRef& ref) {
  auto& l = r.levels[ref.level];
  if (ref.kind == 0) return l.dfl_logits[ref.index];
  if (ref.kind == 1) return l.class_logits[ref.index];
  return l.attribute_logits[ref.index];
}

bool grad_close(double analytic, double numeric) {
  return std::abs(analytic - numeric) <= 1e-4 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-8;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("bce with logits and its gradient") {
    double g = 0.0;
    CHECK(bce_with_logits(0.0, 1.0, &g) == doctest::Approx(std::log(2.0)));
    CHECK(g == doctest::Approx(-0.5));
    CHECK(std::isfinite(bce_with_logits(800.0, 0.0)));
    CHECK(bce_with_logits(800.0, 0.0) == doctest::Approx(800.0));
    for (double z : {-3.0, -0.2, 0.7, 4.0}) {
      for (double t : {0.0, 0.3, 1.0}) {
        bce_with_logits(z, t, &g);
        const double h = 1e-6;
        const double fd = (bce_with_logits(z + h, t) - bce_with_logits(z - h, t)) / (2 * h);
        CHECK(grad_close(g, fd));
      }
    }
  }

  TEST_CASE("ciou loss: zero for identical boxes, gradient matches finite differences") {
    const BoundingBox t{10, 10, 30, 50};
    // Only the stabilizing epsilon in the union keeps this from exact zero.
    CHECK(std::abs(ciou_loss(t, t)) < 1e-8);
    CHECK(ciou_loss({100, 100, 110, 110}, t) > 1.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-6.0, 6.0);
    for (int trial = 0; trial < 50; ++trial) {
      const BoundingBox p{10 + u(rng), 10 + u(rng), 30 + u(rng), 50 + u(rng)};
      std::array<double, 4> g{};
      ciou_loss(p, t, &g);
      for (int k = 0; k < 4; ++k) {
        BoundingBox a = p, b = p;
        const double h = 1e-6;
        (&a.x_min)[k] += h;
        (&b.x_min)[k] -= h;
        const double fd = (ciou_loss(a, t) - ciou_loss(b, t)) / (2 * h);
        CHECK(grad_close(g[k], fd));
      }
    }
  }

  TEST_CASE("dfl loss: bracket weighting and gradient") {
    // target exactly on a bin: loss is -log softmax of that bin
    std::vector<double> logits = {0.0, 0.0, 0.0, 0.0};
    CHECK(dfl_loss(logits, 2.0) == doctest::Approx(std::log(4.0)));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> z(8);
      for (double& v : z) v = n(rng);
      const double target = std::abs(n(rng)) * 2.5;
      std::vector<double> g(8, 0.0);
      dfl_loss(z, target, g);
      for (std::size_t k = 0; k < z.size(); ++k) {
        auto a = z, b = z;
        a[k] += 1e-6;
        b[k] -= 1e-6;
        CHECK(grad_close(g[k], (dfl_loss(a, target) - dfl_loss(b, target)) / 2e-6));
      }
    }
  }

  TEST_CASE("assignment: positives lie inside their box and each cell has one owner") {
    const nn::RawPredictions raw = random_raw(5);
    const auto recs = records_for(AnnotationTier::Disease, 6);
    const AssignmentResult a = assign_targets(raw, recs);
    REQUIRE(a.positives.size() == recs.size());
    std::set<std::pair<int, std::size_t>> used;
    for (std::size_t g = 0; g < recs.size(); ++g) {
      CHECK_FALSE(a.positives[g].empty());
      CHECK(a.positives[g].size() <= 10);
      double best = 0.0;
      for (const auto& p : a.positives[g]) {
        const auto& lv = raw.levels[p.level];
        CHECK(lv.center_x(p.cell) > recs[g].box.x_min);
        CHECK(lv.center_x(p.cell) < recs[g].box.x_max);
        CHECK(lv.center_y(p.cell) > recs[g].box.y_min);
        CHECK(lv.center_y(p.cell) < recs[g].box.y_max);
        CHECK(a.cell_owner[p.level][p.cell] == static_cast<int>(g));
        CHECK(used.insert({p.level, p.cell}).second);
        CHECK(p.target_score >= 0.0);
        best = std::max(best, p.target_score);
      }
      double max_iou = 0.0;
      for (const auto& p : a.positives[g]) max_iou = std::max(max_iou, p.iou);
      CHECK(best == doctest::Approx(max_iou));
    }
  }

  TEST_CASE("total equals the weighted sum of its components") {
    for (int seed = 0; seed < 10; ++seed) {
      for (AnnotationTier tier : {AnnotationTier::Quadrant, AnnotationTier::Enumeration, AnnotationTier::Disease}) {
        const nn::RawPredictions raw = random_raw(100 + seed);
        const auto recs = records_for(tier, 200 + seed);
        const LossWeights w;
        const LossBreakdown l = composite_loss(raw, assign_targets(raw, recs), tier, w);
        const double manual = 7.5 * l.bbox + 0.5 * l.cls + 1.5 * l.dfl + 8.0 * (l.attr[0] + l.attr[1] + l.attr[2] + l.attr[3]);
        CHECK(std::abs(l.total - manual) <= 1e-10 * std::abs(manual));
        CHECK(l.total == doctest::Approx(l.weighted_sum(w)).epsilon(1e-12));
        CHECK(l.attr_masked == (tier != AnnotationTier::Disease));
        CHECK(l.class_quadrant_only == (tier == AnnotationTier::Quadrant));
      }
    }
  }

  TEST_CASE("logit gradient matches finite differences for every tier") {
    std::mt19937_64 rng(9);
    for (AnnotationTier tier : {AnnotationTier::Quadrant, AnnotationTier::Enumeration, AnnotationTier::Disease}) {
      nn::RawPredictions raw = random_raw(31);
      const auto recs = records_for(tier, 32);
      const AssignmentResult as = assign_targets(raw, recs);
      nn::RawPredictions grad = raw.zeros_like();
      composite_loss(raw, as, tier, {}, &grad);
      auto eval = [&](nn::RawPredictions& r) { return composite_loss(r, as, tier, {}).total; };
      // Probe positives' logits (where most terms live) and random cells.
      std::vector<LogitRef> probes;
      for (const auto& per_gt : as.positives) {
        for (const auto& p : per_gt) {
          const std::size_t bins = raw.levels[p.level].bins();
          probes.push_back({p.level, 0, p.cell * 4 * bins + rng() % (4 * bins)});
          probes.push_back({p.level, 1, p.cell * 32 + rng() % 32});
          probes.push_back({p.level, 2, p.cell * 4 + rng() % 4});
        }
      }
      for (int i = 0; i < 20; ++i) probes.push_back({static_cast<int>(rng() % 3), 1, rng() % raw.levels[2].class_logits.size()});
      for (const LogitRef& ref : probes) {
        const double h = 1e-6;
        const double saved = logit(raw, ref);
        logit(raw, ref) = saved + h;
        const double up = eval(raw);
        logit(raw, ref) = saved - h;
        const double down = eval(raw);
        logit(raw, ref) = saved;
        const double fd = (up - down) / (2 * h);
        const double an = logit(grad, ref);
        if (!grad_close(an, fd)) {
          INFO("tier " << static_cast<int>(tier) << " level " << ref.level << " kind " << ref.kind << " idx " << ref.index);
          CHECK(an == doctest::Approx(fd));
        }
        if (ref.kind == 2 && tier != AnnotationTier::Disease) CHECK(an == 0.0);
      }
    }
  }

  TEST_CASE("non-disease tiers give exactly zero attribute loss and gradient") {
    nn::RawPredictions raw = random_raw(41);
    for (AnnotationTier tier : {AnnotationTier::Quadrant, AnnotationTier::Enumeration}) {
      const auto recs = records_for(tier, 42);
      nn::RawPredictions grad = raw.zeros_like();
      const LossBreakdown l = composite_loss(raw, assign_targets(raw, recs), tier, {}, &grad);
      for (double a : l.attr) CHECK(a == 0.0);
      for (const auto& lv : grad.levels)
        for (double g : lv.attribute_logits) CHECK(g == 0.0);
    }
  }

  TEST_CASE("records that do not fit the tier are rejected") {
    const nn::RawPredictions raw = random_raw(51);
    const auto recs = records_for(AnnotationTier::Enumeration, 52);
    try {
      composite_loss(raw, assign_targets(raw, recs), AnnotationTier::Disease, {});
      FAIL("expected InvalidTier");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidTier);
    }
  }

  TEST_CASE("an image without teeth only pays the background class loss") {
    const nn::RawPredictions raw = random_raw(61);
    const LossBreakdown l = composite_loss(raw, assign_targets(raw, {}), AnnotationTier::Disease, {});
    CHECK(l.bbox == 0.0);
    CHECK(l.dfl == 0.0);
    CHECK(l.cls > 0.0);
  }

  TEST_CASE("a mixed-tier batch equals the sum of its single-tier parts") {
    nn::Detector model(tiny_config());
    model.initialize(3);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<TrainSample> batch;
    const AnnotationTier tiers[] = {AnnotationTier::Disease, AnnotationTier::Quadrant, AnnotationTier::Enumeration,
                                    AnnotationTier::Disease};
    for (int i = 0; i < 4; ++i) {
      TrainSample s;
      s.image_id = i;
      s.image = Image(64, 64);
      for (double& p : s.image.pixels) p = u(rng);
      s.tier = tiers[i];
      s.records = records_for(s.tier, 70 + i);
      batch.push_back(s);
    }
    std::vector<double> g_mixed(model.parameters().size(), 0.0);
    const LossBreakdown mixed = batch_loss_and_grad(model, batch, {}, {}, g_mixed);
    std::vector<double> g_parts(model.parameters().size(), 0.0);
    LossBreakdown parts;
    for (AnnotationTier t : {AnnotationTier::Quadrant, AnnotationTier::Enumeration, AnnotationTier::Disease}) {
      std::vector<TrainSample> sub;
      for (const auto& s : batch)
        if (s.tier == t) sub.push_back(s);
      parts += batch_loss_and_grad(model, sub, {}, {}, g_parts);
    }
    CHECK(mixed.total == doctest::Approx(parts.total).epsilon(1e-12));
    double max_diff = 0.0, max_g = 0.0;
    for (std::size_t i = 0; i < g_mixed.size(); ++i) {
      max_diff = std::max(max_diff, std::abs(g_mixed[i] - g_parts[i]));
      max_g = std::max(max_g, std::abs(g_mixed[i]));
    }
    CHECK(max_diff <= 1e-12 * std::max(1.0, max_g));
  }
}
