#include <random>

#include "doctest.h"
#include "eval_support.hpp"
#include "json.hpp"
#include "yolortho/error.hpp"
#include "yolortho/evaluation.hpp"

using namespace yolortho;
using namespace yolortho::eval;
namespace yt = yolortho::testing;

namespace {

const std::vector<double> kAt50 = {0.5};

std::vector<PredEntry> axis_preds(const std::vector<ImagePredictions>& preds) {
  std::vector<PredEntry> out;
  for (const auto& p : preds)
    for (const auto& d : p.detections) out.push_back({p.image_id, d.box, class_index(*d.assigned_fdi), d.confidence});
  return out;
}

std::vector<GtEntry> axis_gts(const std::vector<ImageGroundTruth>& gts) {
  std::vector<GtEntry> out;
  for (const auto& g : gts)
    for (const auto& r : g.records) out.push_back({g.image_id, r.box, class_index(*r.fdi)});
  return out;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("average precision examples") {
    const BoundingBox box{0, 0, 10, 10};
    const std::vector<GtEntry> gt = {{1, box, 0}};
    CHECK(average_precision(std::vector<PredEntry>{{1, box, 0, 0.9}}, gt, coco_iou_thresholds()) == 1.0);
    CHECK(average_precision(std::vector<PredEntry>{}, gt, coco_iou_thresholds()) == 0.0);
    CHECK(average_precision(std::vector<PredEntry>{{1, box, 0, 0.9}}, std::vector<GtEntry>{}, kAt50) == 0.0);

    // IoU 0.8 true positive ranked above a disjoint false positive.
    const std::vector<PredEntry> two = {{1, {0, 0, 10, 8}, 0, 0.9}, {1, {50, 50, 60, 60}, 0, 0.8}};
    CHECK(box_iou(two[0].box, box) == doctest::Approx(0.8));
    CHECK(average_precision(two, gt, kAt50) == 1.0);
    CHECK(average_precision(two, gt, kAt50) == yt::reference_mean_ap(two, gt, kAt50));
  }

  TEST_CASE("mixed fixture matches a hand step-through") {
    // Two GTs; ranked TP, FP, TP. Recall 0.5 at precision 1, then recall 1
    // at precision 2/3: 51 recall points at 1 and 50 at 2/3.
    const std::vector<GtEntry> gt = {{1, {0, 0, 10, 10}, 4}, {2, {0, 0, 10, 10}, 4}};
    const std::vector<PredEntry> preds = {
        {1, {0, 0, 10, 10}, 4, 0.9}, {1, {30, 30, 40, 40}, 4, 0.8}, {2, {1, 0, 10, 10}, 4, 0.7}};
    const double expected = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    CHECK(average_precision(preds, gt, kAt50) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(yt::reference_mean_ap(preds, gt, kAt50) - expected) < 1e-12);
    // The shifted box has IoU 0.9, so it drops out above 0.9.
    const auto curve = interpolated_precision(preds, gt, 0.95);
    CHECK(curve[50] == 1.0);
    CHECK(curve[51] == 0.0);
  }

  TEST_CASE("matching against the independent oracle") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 40; ++t) {
      auto [preds, gts] = yt::random_eval_fixture(rng);
      const auto p = axis_preds(preds);
      const auto g = axis_gts(gts);
      const auto thr = coco_iou_thresholds();
      CHECK(std::abs(average_precision(p, g, thr) - yt::reference_mean_ap(p, g, thr)) < 1e-9);
      const AxisReport axis = evaluate_axis(p, g);
      CHECK(std::abs(axis.ap - yt::reference_mean_ap(p, g, thr)) < 1e-9);
      CHECK(std::abs(axis.ap50 - yt::reference_mean_ap(p, g, kAt50)) < 1e-9);
      CHECK(axis.ap >= 0.0);
      CHECK(axis.ap <= 1.0);
    }
  }

  TEST_CASE("perfect predictions score one on every axis") {
    const auto gts = yt::perfect_fixture_gt();
    const auto rep = challenge_report(yt::predictions_from_gt(gts), gts);
    CHECK(rep.quadrant.ap == 1.0);
    CHECK(rep.enumeration.ap == 1.0);
    CHECK(rep.diagnosis.ap == 1.0);
    CHECK(rep.quadrant.ap50 == 1.0);
    CHECK(rep.images == 2);
    CHECK(rep.ground_truths == 32 + 16);
    CHECK(rep.detections == 48);
    CHECK(rep.quadrant.per_class.size() == 4);
    CHECK(rep.diagnosis.per_class.size() == 3);
  }

  TEST_CASE("wrong positions inside the right quadrant") {
    const auto gts = yt::perfect_fixture_gt();
    auto preds = yt::predictions_from_gt(gts);
    for (auto& p : preds)
      for (auto& d : p.detections) d.assigned_fdi = FDILabel(d.assigned_fdi->quadrant(), 9 - d.assigned_fdi->position());
    const auto rep = challenge_report(preds, gts);
    CHECK(rep.quadrant.ap == 1.0);
    CHECK(rep.enumeration.ap < 1.0);
  }

  TEST_CASE("a duplicate lower-confidence detection never raises AP") {
    std::mt19937_64 rng(22);
    for (int t = 0; t < 30; ++t) {
      auto [preds, gts] = yt::random_eval_fixture(rng);
      const auto before = challenge_report(preds, gts);
      auto& dets = preds[0].detections;
      if (dets.empty()) continue;
      Detection dup = dets[rng() % dets.size()];
      dup.confidence *= 0.5;
      dets.push_back(dup);
      const auto after = challenge_report(preds, gts);
      CHECK(after.quadrant.ap <= before.quadrant.ap);
      CHECK(after.enumeration.ap <= before.enumeration.ap);
      CHECK(after.diagnosis.ap <= before.diagnosis.ap);
      CHECK(after.enumeration.ap50 <= before.enumeration.ap50);
    }
  }

  TEST_CASE("quadrant AP is invariant to permuting positions within quadrants") {
    std::mt19937_64 rng(23);
    for (int t = 0; t < 50; ++t) {
      auto [preds, gts] = yt::random_eval_fixture(rng);
      std::array<std::array<int, 8>, 4> perm;
      for (auto& q : perm) {
        std::iota(q.begin(), q.end(), 0);
        std::shuffle(q.begin(), q.end(), rng);
      }
      const auto base = challenge_report(preds, gts);
      for (auto& p : preds)
        for (auto& d : p.detections) d.assigned_fdi = yt::permute_position(*d.assigned_fdi, perm);
      for (auto& g : gts)
        for (auto& r : g.records) r.fdi = yt::permute_position(*r.fdi, perm);
      const auto moved = challenge_report(preds, gts);
      CHECK(moved.quadrant.ap == base.quadrant.ap);
      CHECK(moved.quadrant.ap50 == base.quadrant.ap50);
    }
  }

  TEST_CASE("reports are deterministic and serializable") {
    std::mt19937_64 rng(24);
    auto [preds, gts] = yt::random_eval_fixture(rng);
    const auto a = challenge_report(preds, gts);
    const auto b = challenge_report(preds, gts);
    CHECK(report_to_json(a) == report_to_json(b));
    CHECK(pr_curve_csv(a.enumeration) == pr_curve_csv(b.enumeration));
    const auto j = nlohmann::json::parse(report_to_json(a));
    CHECK(j.contains("quadrant"));
    CHECK(j.contains("enumeration"));
    CHECK(j.contains("diagnosis"));
    const std::string table = report_table(a);
    CHECK(table.find("AP-Quadrant") != std::string::npos);
    CHECK(table.find("AP-Enumeration") != std::string::npos);
    CHECK(pr_curve_csv(a.quadrant).rfind("label,recall,precision", 0) == 0);
  }

  TEST_CASE("diagnosis scoring options") {
    const auto gts = yt::perfect_fixture_gt();
    auto preds = yt::predictions_from_gt(gts);
    // Below the decision threshold the attribute entry disappears.
    for (auto& p : preds)
      for (auto& d : p.detections)
        for (double& v : d.attribute_probs.values) v *= 0.4;
    CHECK(challenge_report(preds, gts).diagnosis.ap == 0.0);
    EvalConfig cfg;
    cfg.attr_threshold = 0.3;
    cfg.diag_score = DiagScore::Attribute;
    CHECK(challenge_report(preds, gts, cfg).diagnosis.ap == 1.0);
  }

  TEST_CASE("missing assigned labels are rejected") {
    const auto gts = yt::perfect_fixture_gt();
    auto preds = yt::predictions_from_gt(gts);
    preds[1].detections[0].assigned_fdi.reset();
    try {
      challenge_report(preds, gts);
      FAIL("expected MissingAssignedLabels");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingAssignedLabels);
    }
  }
}
