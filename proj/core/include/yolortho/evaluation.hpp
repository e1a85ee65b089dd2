#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "yolortho/predictions.hpp"
#include "yolortho/types.hpp"

namespace yolortho::eval {

/// One scored, labelled box on one image, for a single class axis.
struct PredEntry {
  std::int64_t image_id = 0;
  BoundingBox box;
  int label = 0;
  double score = 0.0;
};

struct GtEntry {
  std::int64_t image_id = 0;
  BoundingBox box;
  int label = 0;
};

inline constexpr int kRecallPoints = 101;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

/// 101-point interpolated precision for one class at one IoU threshold.
/// Predictions are visited by descending score (ties keep input order) and
/// each claims the unmatched same-image GT with the highest IoU >= thr.
std::array<double, kRecallPoints> interpolated_precision(std::span<const PredEntry> preds,
                                                         std::span<const GtEntry> gts, double iou_thr);

/// Mean over GT-present classes and over the thresholds; 0 when no class has GT.
double average_precision(std::span<const PredEntry> preds, std::span<const GtEntry> gts,
                         std::span<const double> iou_thresholds);

struct ClassAP {
  int label = 0;
  std::size_t num_gt = 0;
  double ap = 0.0;    ///< mean over 0.50:0.95
  double ap50 = 0.0;
  std::array<double, kRecallPoints> precision50{};  ///< PR curve at IoU 0.5
};

struct AxisReport {
  double ap = 0.0;
  double ap50 = 0.0;
  std::vector<ClassAP> per_class;  ///< classes with at least one GT, ascending label
};

AxisReport evaluate_axis(std::span<const PredEntry> preds, std::span<const GtEntry> gts);

enum class DiagScore { Product, Confidence, Attribute };

struct EvalConfig {
  double attr_threshold = 0.5;
  DiagScore diag_score = DiagScore::Product;  ///< confidence x attribute probability
};

struct ImageGroundTruth {
  std::int64_t image_id = 0;
  std::vector<ToothRecord> records;
};

struct EvalReport {
  AxisReport quadrant;     ///< labels 0..3 (quadrant - 1)
  AxisReport enumeration;  ///< labels 0..31 (class_index)
  AxisReport diagnosis;    ///< labels 0..3 (attribute slot)
  std::size_t images = 0;
  std::size_t ground_truths = 0;
  std::size_t detections = 0;
};

/// Three-axis evaluation of post-processed detections. Every detection must
/// carry assigned_fdi (MissingAssignedLabels otherwise). Quadrant GTs come
/// from every record, enumeration GTs from records with an FDI, diagnosis
/// GTs from each true attribute flag.
EvalReport challenge_report(std::span<const ImagePredictions> preds,
                            std::span<const ImageGroundTruth> gts, const EvalConfig& cfg = {});

std::string report_to_json(const EvalReport& report);
/// Plain-text table: one row per metric, columns quadrant / diagnosis / enumeration.
std::string report_table(const EvalReport& report);
/// label,recall,precision rows of the IoU-0.5 PR curves of one axis.
std::string pr_curve_csv(const AxisReport& axis);

}  // namespace yolortho::eval
