#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "yolortho/dataio.hpp"
#include "yolortho/network.hpp"
#include "yolortho/types.hpp"

namespace yolortho::train {

struct LossWeights {
  double w_bbox = 7.5;
  double w_class = 0.5;
  double w_dfl = 1.5;
  double w_attr = 8.0;  ///< shared by the four attribute heads
};

/// Task-aligned assignment: metric m = p^alpha * IoU^beta; the top-k cells
/// whose centers fall inside a ground-truth box become its positives.
struct AssignerConfig {
  double alpha = 0.5;
  double beta = 6.0;
  int topk = 10;
};

struct GroundTruthTarget {
  BoundingBox box;
  int class_index = -1;  ///< -1 for quadrant-only records
  int quadrant = 0;
  std::optional<AttributeFlags> attributes;
};

struct PositiveCell {
  int level = 0;
  std::size_t cell = 0;
  double metric = 0.0;
  double iou = 0.0;
  double target_score = 0.0;  ///< metric normalized per GT, scaled by its best IoU
};

struct AssignmentResult {
  std::vector<GroundTruthTarget> targets;
  std::vector<std::vector<PositiveCell>> positives;  ///< per target
  std::array<std::vector<int>, 3> cell_owner;        ///< per level: target index or -1

  std::size_t num_positives() const noexcept;
  double target_score_sum() const noexcept;
};

AssignmentResult assign_targets(const nn::RawPredictions& raw, std::span<const ToothRecord> gts,
                                const AssignerConfig& cfg = {});

struct LossBreakdown {
  double total = 0.0;
  double bbox = 0.0;
  double cls = 0.0;
  double dfl = 0.0;
  std::array<double, kNumAttributes> attr{};

  bool attr_masked = false;            ///< attribute terms forced to zero
  bool class_quadrant_only = false;    ///< class term marginalized to quadrants

  /// Weighted sum of the components, recomputed from scratch.
  double weighted_sum(const LossWeights& w) const noexcept;
  LossBreakdown& operator+=(const LossBreakdown& other) noexcept;
};

/// Weighted detection loss for one image. Terms:
///   bbox  CIoU loss over positives, weighted by target score
///   cls   sigmoid BCE over every cell and class (quadrant tier: BCE on the
///         noisy-OR of each quadrant's eight class probabilities)
///   dfl   distribution focal loss over positives, weighted by target score
///   attr  per-attribute BCE over positives (disease tier only)
/// bbox/cls/dfl are divided by max(sum of target scores, 1); attr by the
/// positive count. When `grad` is given, d(total)/d(logits) is added to it.
LossBreakdown composite_loss(const nn::RawPredictions& raw, const AssignmentResult& assignment,
                             dataio::AnnotationTier tier, const LossWeights& weights,
                             nn::RawPredictions* grad = nullptr);

// Building blocks, exposed for testing.

/// 1 - CIoU between a predicted and a target box; `grad` receives
/// d(loss)/d(x_min, y_min, x_max, y_max) of the prediction.
double ciou_loss(const BoundingBox& pred, const BoundingBox& target,
                 std::array<double, 4>* grad = nullptr);

/// Cross-entropy of softmax(logits) against the two integer bins bracketing
/// `target` (in bin units), weighted by proximity. `grad` (same length as
/// logits) receives d(loss)/d(logits).
double dfl_loss(std::span<const double> logits, double target, std::span<double> grad = {});

/// Numerically stable BCE with logits; `grad` receives d/d(logit).
double bce_with_logits(double logit, double target, double* grad = nullptr);

}  // namespace yolortho::train
