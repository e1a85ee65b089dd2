#include <algorithm>
#include <cmath>
#include <numbers>

#include "yolortho/error.hpp"
#include "yolortho/loss.hpp"

namespace yolortho::train {

namespace {

constexpr double kBoxEps = 1e-7;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Softmax in place; returns the log-normalizer.
double softmax(std::span<const double> logits, std::span<double> probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  for (double& p : probs) p /= z;
  return mx + std::log(z);
}

void validate_tier(dataio::AnnotationTier tier, const AssignmentResult& a) {
  using dataio::AnnotationTier;
  if (tier != AnnotationTier::Quadrant && tier != AnnotationTier::Enumeration &&
      tier != AnnotationTier::Disease) {
    throw Error(ErrorKind::InvalidTier, "unknown annotation tier value");
  }
  for (const auto& t : a.targets) {
    if (tier != AnnotationTier::Quadrant && t.class_index < 0) {
      throw Error(ErrorKind::InvalidTier, "tooth without FDI label in a " +
                                              std::string(dataio::to_string(tier)) + "-tier image");
    }
    if (tier == AnnotationTier::Disease && !t.attributes) {
      throw Error(ErrorKind::InvalidTier, "tooth without attributes in a disease-tier image");
    }
  }
}

}  // namespace

double LossBreakdown::weighted_sum(const LossWeights& w) const noexcept {
  double s = w.w_bbox * bbox + w.w_class * cls + w.w_dfl * dfl;
  for (double a : attr) s += w.w_attr * a;
  return s;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) noexcept {
  total += o.total;
  bbox += o.bbox;
  cls += o.cls;
  dfl += o.dfl;
  for (std::size_t i = 0; i < attr.size(); ++i) attr[i] += o.attr[i];
  attr_masked = attr_masked && o.attr_masked;
  class_quadrant_only = class_quadrant_only && o.class_quadrant_only;
  return *this;
}

double bce_with_logits(double z, double t, double* grad) {
  if (grad) *grad = sigmoid(z) - t;
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

double dfl_loss(std::span<const double> logits, double target, std::span<double> grad) {
  const int bins = static_cast<int>(logits.size());
  const double t = std::clamp(target, 0.0, bins - 1 - 0.01);
  const int left = static_cast<int>(std::floor(t));
  const int right = left + 1;
  const double w_left = right - t;
  const double w_right = t - left;
  std::vector<double> probs(logits.size());
  const double lse = softmax(logits, probs);
  const double loss = w_left * (lse - logits[left]) + w_right * (lse - logits[right]);
  if (!grad.empty()) {
    for (int i = 0; i < bins; ++i) grad[i] = probs[i];
    grad[left] -= w_left;
    grad[right] -= w_right;
  }
  return loss;
}

double ciou_loss(const BoundingBox& p, const BoundingBox& g, std::array<double, 4>* grad) {
  constexpr double k = 4.0 / (std::numbers::pi * std::numbers::pi);
  const double w1 = p.x_max - p.x_min;
  const double h1 = p.y_max - p.y_min + kBoxEps;
  const double w2 = g.x_max - g.x_min;
  const double h2 = g.y_max - g.y_min + kBoxEps;

  const bool x2_inner = p.x_max <= g.x_max;  // min(x2, X2) picks the prediction
  const bool x1_inner = p.x_min >= g.x_min;  // max(x1, X1) picks the prediction
  const bool y2_inner = p.y_max <= g.y_max;
  const bool y1_inner = p.y_min >= g.y_min;
  const double iw = std::min(p.x_max, g.x_max) - std::max(p.x_min, g.x_min);
  const double ih = std::min(p.y_max, g.y_max) - std::max(p.y_min, g.y_min);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = w1 * h1 + w2 * h2 - inter + kBoxEps;
  const double iou = inter / uni;

  const double cw = std::max(p.x_max, g.x_max) - std::min(p.x_min, g.x_min);
  const double ch = std::max(p.y_max, g.y_max) - std::min(p.y_min, g.y_min);
  const double c2 = cw * cw + ch * ch + kBoxEps;
  const double dx = g.x_min + g.x_max - p.x_min - p.x_max;
  const double dy = g.y_min + g.y_max - p.y_min - p.y_max;
  const double rho2 = (dx * dx + dy * dy) / 4.0;

  const double angle = std::atan(w2 / h2) - std::atan(w1 / h1);
  const double v = k * angle * angle;
  const double denom = v - iou + (1.0 + kBoxEps);
  const double loss = 1.0 - iou + rho2 / c2 + v * v / denom;

  if (grad) {
    // d loss = (v^2/D^2 - 1) d iou + d(rho2/c2) + (2v/D - v^2/D^2) dv
    const double coef_iou = v * v / (denom * denom) - 1.0;
    const double coef_v = 2.0 * v / denom - v * v / (denom * denom);

    // d inter / d(x1, y1, x2, y2)
    std::array<double, 4> d_inter{};
    if (overlap) {
      d_inter[0] = x1_inner ? -ih : 0.0;
      d_inter[2] = x2_inner ? ih : 0.0;
      d_inter[1] = y1_inner ? -iw : 0.0;
      d_inter[3] = y2_inner ? iw : 0.0;
    }
    const std::array<double, 4> d_area = {-h1, -w1, h1, w1};
    std::array<double, 4> d_iou{};
    for (int i = 0; i < 4; ++i)
      d_iou[i] = d_inter[i] * (1.0 / uni + inter / (uni * uni)) - inter / (uni * uni) * d_area[i];

    const std::array<double, 4> d_rho2 = {-dx / 2.0, -dy / 2.0, -dx / 2.0, -dy / 2.0};
    const std::array<double, 4> d_c2 = {
        p.x_min <= g.x_min ? -2.0 * cw : 0.0, p.y_min <= g.y_min ? -2.0 * ch : 0.0,
        p.x_max >= g.x_max ? 2.0 * cw : 0.0, p.y_max >= g.y_max ? 2.0 * ch : 0.0};

    // d atan(w1/h1) = (h1 dw1 - w1 dh1) / (w1^2 + h1^2)
    const double r2 = w1 * w1 + h1 * h1;
    const double dv_scale = -2.0 * k * angle / r2;
    const std::array<double, 4> d_v = {-h1 * dv_scale, w1 * dv_scale, h1 * dv_scale, -w1 * dv_scale};

    for (int i = 0; i < 4; ++i) {
      const double d_ratio = (d_rho2[i] * c2 - rho2 * d_c2[i]) / (c2 * c2);
      (*grad)[i] = coef_iou * d_iou[i] + d_ratio + coef_v * d_v[i];
    }
  }
  return loss;
}

LossBreakdown composite_loss(const nn::RawPredictions& raw, const AssignmentResult& assignment,
                             dataio::AnnotationTier tier, const LossWeights& weights,
                             nn::RawPredictions* grad) {
  using dataio::AnnotationTier;
  validate_tier(tier, assignment);

  LossBreakdown out;
  out.attr_masked = tier != AnnotationTier::Disease;
  out.class_quadrant_only = tier == AnnotationTier::Quadrant;

  const double norm = std::max(assignment.target_score_sum(), 1.0);
  const std::size_t n_pos = assignment.num_positives();
  const double attr_norm = static_cast<double>(std::max<std::size_t>(n_pos, 1));

  // Per-cell class target: score on the GT's class (or quadrant), 0 elsewhere.
  std::array<std::vector<double>, 3> cell_score;
  for (std::size_t l = 0; l < raw.levels.size(); ++l) cell_score[l].assign(raw.levels[l].cells(), 0.0);
  for (const auto& per_gt : assignment.positives)
    for (const auto& p : per_gt) cell_score[p.level][p.cell] = p.target_score;

  // Classification over all cells.
  double cls_sum = 0.0;
  for (std::size_t l = 0; l < raw.levels.size(); ++l) {
    const nn::LevelPredictions& level = raw.levels[l];
    for (std::size_t c = 0; c < level.cells(); ++c) {
      const int owner = assignment.cell_owner[l][c];
      const auto logits = level.classes(c);
      double* g = grad ? grad->levels[l].class_logits.data() + c * kNumClasses : nullptr;
      if (tier == AnnotationTier::Quadrant) {
        const int target_q = owner >= 0 ? assignment.targets[owner].quadrant : 0;
        for (int q = 1; q <= kNumQuadrants; ++q) {
          const double t = q == target_q ? cell_score[l][c] : 0.0;
          double s = 0.0;  // log(1 - q_prob)
          for (int k = 0; k < kPositionsPerQuadrant; ++k) s -= softplus(logits[(q - 1) * kPositionsPerQuadrant + k]);
          const double qp = std::max(-std::expm1(s), 1e-300);
          cls_sum += -t * std::log(qp) - (1.0 - t) * s;
          if (g) {
            const double factor = (1.0 - t) - t * std::exp(s) / qp;
            for (int k = 0; k < kPositionsPerQuadrant; ++k) {
              const int j = (q - 1) * kPositionsPerQuadrant + k;
              g[j] += weights.w_class * sigmoid(logits[j]) * factor / norm;
            }
          }
        }
      } else {
        const int target_k = owner >= 0 ? assignment.targets[owner].class_index : -1;
        for (int k = 0; k < kNumClasses; ++k) {
          const double t = k == target_k ? cell_score[l][c] : 0.0;
          double d = 0.0;
          cls_sum += bce_with_logits(logits[k], t, g ? &d : nullptr);
          if (g) g[k] += weights.w_class * d / norm;
        }
      }
    }
  }
  out.cls = cls_sum / norm;

  // Box regression, distribution and attribute terms over positives.
  double bbox_sum = 0.0;
  double dfl_sum = 0.0;
  std::array<double, kNumAttributes> attr_sum{};
  std::vector<double> probs;
  std::vector<double> dgrad;
  for (std::size_t gi = 0; gi < assignment.positives.size(); ++gi) {
    const GroundTruthTarget& target = assignment.targets[gi];
    for (const PositiveCell& p : assignment.positives[gi]) {
      const nn::LevelPredictions& level = raw.levels[p.level];
      const int bins = level.bins();
      const double stride = level.stride;
      const double cx = level.center_x(p.cell);
      const double cy = level.center_y(p.cell);
      const double w = p.target_score;

      // Expected side distances and their softmax distributions.
      std::array<double, 4> dist{};
      std::array<std::vector<double>, 4> side_probs;
      for (int s = 0; s < 4; ++s) {
        side_probs[s].resize(bins);
        softmax(level.dfl(p.cell, s), side_probs[s]);
        double e = 0.0;
        for (int i = 0; i < bins; ++i) e += i * side_probs[s][i];
        dist[s] = stride * e;
      }
      const BoundingBox pred{cx - dist[0], cy - dist[1], cx + dist[2], cy + dist[3]};
      std::array<double, 4> dbox{};
      bbox_sum += w * ciou_loss(pred, target.box, grad ? &dbox : nullptr);

      const std::array<double, 4> target_dist = {(cx - target.box.x_min) / stride, (cy - target.box.y_min) / stride,
                                                 (target.box.x_max - cx) / stride, (target.box.y_max - cy) / stride};
      double* gd = grad ? grad->levels[p.level].dfl_logits.data() : nullptr;
      dgrad.assign(bins, 0.0);
      for (int s = 0; s < 4; ++s) {
        dfl_sum += w * dfl_loss(level.dfl(p.cell, s), target_dist[s], gd ? std::span<double>(dgrad) : std::span<double>{}) / 4.0;
        if (!gd) continue;
        double* gs = gd + (p.cell * 4 + s) * bins;
        // d pred_corner / d dist: left/top enter with -1, right/bottom with +1.
        const double d_dist = (s < 2 ? -dbox[s] : dbox[s]);
        const auto& pr = side_probs[s];
        const double e = dist[s] / stride;
        for (int i = 0; i < bins; ++i) {
          gs[i] += weights.w_bbox * w * d_dist * stride * pr[i] * (i - e) / norm;
          gs[i] += weights.w_dfl * w * dgrad[i] / 4.0 / norm;
        }
      }

      if (tier == AnnotationTier::Disease) {
        const auto logits = level.attributes(p.cell);
        double* ga = grad ? grad->levels[p.level].attribute_logits.data() + p.cell * kNumAttributes : nullptr;
        for (int a = 0; a < kNumAttributes; ++a) {
          const double y = (*target.attributes)[a] ? 1.0 : 0.0;
          double d = 0.0;
          attr_sum[a] += bce_with_logits(logits[a], y, ga ? &d : nullptr);
          if (ga) ga[a] += weights.w_attr * d / attr_norm;
        }
      }
    }
  }
  out.bbox = bbox_sum / norm;
  out.dfl = dfl_sum / norm;
  if (tier == AnnotationTier::Disease) {
    for (int a = 0; a < kNumAttributes; ++a) out.attr[a] = attr_sum[a] / attr_norm;
  }
  out.total = out.weighted_sum(weights);
  return out;
}

}  // namespace yolortho::train
