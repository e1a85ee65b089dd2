#include "yolortho/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "yolortho/error.hpp"

namespace yolortho::eval {

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::array<double, kRecallPoints> interpolated_precision(std::span<const PredEntry> preds,
                                                         std::span<const GtEntry> gts, double iou_thr) {
  std::array<double, kRecallPoints> out{};
  if (gts.empty()) return out;

  std::map<std::int64_t, std::vector<std::size_t>> gt_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) gt_by_image[gts[g].image_id].push_back(g);

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });

  std::vector<char> taken(gts.size(), 0);
  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const PredEntry& p = preds[order[k]];
    std::size_t best = gts.size();
    double best_iou = iou_thr;
    if (auto it = gt_by_image.find(p.image_id); it != gt_by_image.end()) {
      for (std::size_t g : it->second) {
        if (taken[g]) continue;
        const double iou = box_iou(p.box, gts[g].box);
        if (iou >= best_iou && (best == gts.size() || iou > best_iou)) {
          best = g;
          best_iou = iou;
        }
      }
    }
    if (best != gts.size()) {
      taken[best] = 1;
      ++tp;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
  }
  // Precision envelope: best precision at any recall at least this large.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  for (int r = 0; r < kRecallPoints; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    out[r] = it == recall.end() ? 0.0 : precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return out;
}

namespace {

double mean_of(const std::array<double, kRecallPoints>& a) {
  return std::accumulate(a.begin(), a.end(), 0.0) / kRecallPoints;
}

struct ClassSplit {
  std::map<int, std::vector<PredEntry>> preds;
  std::map<int, std::vector<GtEntry>> gts;
};

ClassSplit split_by_class(std::span<const PredEntry> preds, std::span<const GtEntry> gts) {
  ClassSplit s;
  for (const GtEntry& g : gts) s.gts[g.label].push_back(g);
  for (const PredEntry& p : preds)
    if (s.gts.count(p.label)) s.preds[p.label].push_back(p);
  return s;
}

}  // namespace

double average_precision(std::span<const PredEntry> preds, std::span<const GtEntry> gts,
                         std::span<const double> iou_thresholds) {
  const ClassSplit s = split_by_class(preds, gts);
  if (s.gts.empty() || iou_thresholds.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [label, class_gts] : s.gts) {
    const auto pit = s.preds.find(label);
    const std::span<const PredEntry> class_preds =
        pit == s.preds.end() ? std::span<const PredEntry>{} : std::span<const PredEntry>(pit->second);
    double class_sum = 0.0;
    for (double t : iou_thresholds) class_sum += mean_of(interpolated_precision(class_preds, class_gts, t));
    sum += class_sum / static_cast<double>(iou_thresholds.size());
  }
  return sum / static_cast<double>(s.gts.size());
}

AxisReport evaluate_axis(std::span<const PredEntry> preds, std::span<const GtEntry> gts) {
  const ClassSplit s = split_by_class(preds, gts);
  const std::vector<double> thresholds = coco_iou_thresholds();
  AxisReport report;
  for (const auto& [label, class_gts] : s.gts) {
    const auto pit = s.preds.find(label);
    const std::span<const PredEntry> class_preds =
        pit == s.preds.end() ? std::span<const PredEntry>{} : std::span<const PredEntry>(pit->second);
    ClassAP c;
    c.label = label;
    c.num_gt = class_gts.size();
    double sum = 0.0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const auto curve = interpolated_precision(class_preds, class_gts, thresholds[t]);
      sum += mean_of(curve);
      if (t == 0) {
        c.precision50 = curve;
        c.ap50 = mean_of(curve);
      }
    }
    c.ap = sum / static_cast<double>(thresholds.size());
    report.per_class.push_back(c);
  }
  if (!report.per_class.empty()) {
    for (const ClassAP& c : report.per_class) {
      report.ap += c.ap;
      report.ap50 += c.ap50;
    }
    report.ap /= static_cast<double>(report.per_class.size());
    report.ap50 /= static_cast<double>(report.per_class.size());
  }
  return report;
}

EvalReport challenge_report(std::span<const ImagePredictions> preds,
                            std::span<const ImageGroundTruth> gts, const EvalConfig& cfg) {
  std::vector<PredEntry> pq, pe, pd;
  std::vector<GtEntry> gq, ge, gd;
  EvalReport report;
  report.images = gts.size();

  for (const ImageGroundTruth& img : gts) {
    for (const ToothRecord& r : img.records) {
      ++report.ground_truths;
      const int quadrant = r.fdi ? r.fdi->quadrant() : r.quadrant;
      if (quadrant >= 1 && quadrant <= kNumQuadrants) gq.push_back({img.image_id, r.box, quadrant - 1});
      if (r.fdi) ge.push_back({img.image_id, r.box, class_index(*r.fdi)});
      if (r.attributes) {
        for (int a = 0; a < kNumAttributes; ++a)
          if (r.attributes->values[a]) gd.push_back({img.image_id, r.box, a});
      }
    }
  }

  for (const ImagePredictions& img : preds) {
    for (const Detection& d : img.detections) {
      ++report.detections;
      if (!d.assigned_fdi) {
        throw Error(ErrorKind::MissingAssignedLabels,
                    "image " + std::to_string(img.image_id) + " has a detection without assigned_fdi");
      }
      pq.push_back({img.image_id, d.box, d.assigned_fdi->quadrant() - 1, d.confidence});
      pe.push_back({img.image_id, d.box, class_index(*d.assigned_fdi), d.confidence});
      for (int a = 0; a < kNumAttributes; ++a) {
        const double p = d.attribute_probs.values[a];
        if (p < cfg.attr_threshold) continue;
        double score = d.confidence * p;
        if (cfg.diag_score == DiagScore::Confidence) score = d.confidence;
        if (cfg.diag_score == DiagScore::Attribute) score = p;
        pd.push_back({img.image_id, d.box, a, score});
      }
    }
  }

  report.quadrant = evaluate_axis(pq, gq);
  report.enumeration = evaluate_axis(pe, ge);
  report.diagnosis = evaluate_axis(pd, gd);
  return report;
}

namespace {

nlohmann::json axis_json(const AxisReport& axis, bool fdi_labels) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const ClassAP& c : axis.per_class) {
    nlohmann::json j{{"label", c.label}, {"num_gt", c.num_gt}, {"ap", c.ap}, {"ap50", c.ap50}};
    if (fdi_labels) j["fdi"] = fdi_from_class_index(c.label).code();
    per_class.push_back(std::move(j));
  }
  return {{"ap", axis.ap}, {"ap50", axis.ap50}, {"per_class", std::move(per_class)}};
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["ap_quadrant"] = report.quadrant.ap;
  j["ap_diagnosis"] = report.diagnosis.ap;
  j["ap_enumeration"] = report.enumeration.ap;
  j["ap50_quadrant"] = report.quadrant.ap50;
  j["ap50_diagnosis"] = report.diagnosis.ap50;
  j["ap50_enumeration"] = report.enumeration.ap50;
  j["quadrant"] = axis_json(report.quadrant, false);
  j["diagnosis"] = axis_json(report.diagnosis, false);
  j["enumeration"] = axis_json(report.enumeration, true);
  j["counts"] = {{"images", report.images}, {"ground_truths", report.ground_truths}, {"detections", report.detections}};
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& report) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-10s %12s %12s %14s\n", "metric", "AP-Quadrant", "AP-Diagnosis", "AP-Enumeration");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %12.3f %12.3f %14.3f\n", "AP", report.quadrant.ap, report.diagnosis.ap,
                report.enumeration.ap);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %12.3f %12.3f %14.3f\n", "AP50", report.quadrant.ap50, report.diagnosis.ap50,
                report.enumeration.ap50);
  out += buf;
  return out;
}

std::string pr_curve_csv(const AxisReport& axis) {
  std::ostringstream out;
  out << "label,recall,precision\n";
  for (const ClassAP& c : axis.per_class) {
    for (int r = 0; r < kRecallPoints; ++r) out << c.label << ',' << r / 100.0 << ',' << c.precision50[r] << '\n';
  }
  return out.str();
}

}  // namespace yolortho::eval
