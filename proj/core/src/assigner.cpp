#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "yolortho/error.hpp"
#include "yolortho/loss.hpp"

namespace yolortho::train {

namespace {

constexpr double kInsideEps = 1e-9;

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double log_sigmoid(double x) { return -softplus(-x); }

// log of the probability that at least one class of the quadrant fires.
double log_quadrant_probability(std::span<const double> class_logits, int quadrant) {
  double s = 0.0;
  for (int k = 0; k < kPositionsPerQuadrant; ++k)
    s -= softplus(class_logits[(quadrant - 1) * kPositionsPerQuadrant + k]);
  // log(1 - e^s) for s <= 0.
  return s > -0.693 ? std::log(-std::expm1(s)) : std::log1p(-std::exp(s));
}

BoundingBox predicted_box(const nn::LevelPredictions& level, std::size_t cell) {
  const double cx = level.center_x(cell);
  const double cy = level.center_y(cell);
  return {cx - nn::expected_distance(level.dfl(cell, 0), level.stride),
          cy - nn::expected_distance(level.dfl(cell, 1), level.stride),
          cx + nn::expected_distance(level.dfl(cell, 2), level.stride),
          cy + nn::expected_distance(level.dfl(cell, 3), level.stride)};
}

// The metric is ranked and normalized in log space: class scores can
// collapse far below 1e-100 early in training, and m itself underflows.
struct Candidate {
  int level;
  std::size_t cell;
  double log_metric;
  double iou;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.log_metric != b.log_metric) return a.log_metric > b.log_metric;
  if (a.level != b.level) return a.level < b.level;
  return a.cell < b.cell;
}

}  // namespace

std::size_t AssignmentResult::num_positives() const noexcept {
  std::size_t n = 0;
  for (const auto& p : positives) n += p.size();
  return n;
}

double AssignmentResult::target_score_sum() const noexcept {
  double s = 0.0;
  for (const auto& per_gt : positives)
    for (const auto& p : per_gt) s += p.target_score;
  return s;
}

AssignmentResult assign_targets(const nn::RawPredictions& raw, std::span<const ToothRecord> gts,
                                const AssignerConfig& cfg) {
  if (cfg.topk < 1) throw Error(ErrorKind::InvalidConfig, "assigner.topk must be >= 1");
  AssignmentResult out;
  for (std::size_t l = 0; l < raw.levels.size(); ++l) out.cell_owner[l].assign(raw.levels[l].cells(), -1);

  for (const ToothRecord& r : gts) {
    GroundTruthTarget t;
    t.box = r.box;
    t.quadrant = r.quadrant;
    t.class_index = r.fdi ? class_index(*r.fdi) : -1;
    t.attributes = r.attributes;
    out.targets.push_back(t);
  }
  const std::size_t n_gt = out.targets.size();
  out.positives.assign(n_gt, {});
  if (n_gt == 0) return out;

  // Candidate cells per GT, best first.
  std::vector<std::vector<Candidate>> candidates(n_gt);
  for (std::size_t g = 0; g < n_gt; ++g) {
    const GroundTruthTarget& t = out.targets[g];
    for (int l = 0; l < static_cast<int>(raw.levels.size()); ++l) {
      const nn::LevelPredictions& level = raw.levels[l];
      const double s = level.stride;
      const int x0 = std::max(0, static_cast<int>(std::floor(t.box.x_min / s - 0.5)));
      const int x1 = std::min(level.width - 1, static_cast<int>(std::ceil(t.box.x_max / s - 0.5)));
      const int y0 = std::max(0, static_cast<int>(std::floor(t.box.y_min / s - 0.5)));
      const int y1 = std::min(level.height - 1, static_cast<int>(std::ceil(t.box.y_max / s - 0.5)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t cell = static_cast<std::size_t>(y) * level.width + x;
          const double cx = level.center_x(cell);
          const double cy = level.center_y(cell);
          const double margin =
              std::min({cx - t.box.x_min, cy - t.box.y_min, t.box.x_max - cx, t.box.y_max - cy});
          if (margin <= kInsideEps) continue;
          const auto logits = level.classes(cell);
          const double log_p = t.class_index >= 0 ? log_sigmoid(logits[t.class_index])
                                                  : log_quadrant_probability(logits, t.quadrant);
          const double iou = box_iou(predicted_box(level, cell), t.box);
          const double log_iou = iou > 0.0 ? std::log(iou) : -std::numeric_limits<double>::infinity();
          candidates[g].push_back({l, cell, cfg.alpha * log_p + cfg.beta * log_iou, iou});
        }
      }
    }
    std::sort(candidates[g].begin(), candidates[g].end(), better);
  }

  // Top-k per GT; a contested cell goes to the larger metric (lower GT index on ties).
  const double none = -std::numeric_limits<double>::infinity();
  std::array<std::vector<double>, 3> owner_metric;
  for (std::size_t l = 0; l < raw.levels.size(); ++l) owner_metric[l].assign(raw.levels[l].cells(), none);
  for (std::size_t g = 0; g < n_gt; ++g) {
    const std::size_t k = std::min<std::size_t>(cfg.topk, candidates[g].size());
    for (std::size_t i = 0; i < k; ++i) {
      const Candidate& c = candidates[g][i];
      int& owner = out.cell_owner[c.level][c.cell];
      double& om = owner_metric[c.level][c.cell];
      if (owner < 0 || c.log_metric > om) {
        owner = static_cast<int>(g);
        om = c.log_metric;
      }
    }
  }

  auto count_owned = [&](std::size_t g) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < raw.levels.size(); ++l)
      n += static_cast<std::size_t>(std::count(out.cell_owner[l].begin(), out.cell_owner[l].end(), static_cast<int>(g)));
    return n;
  };
  // A GT that lost every cell takes back its best candidate that is free or
  // whose owner keeps at least one other positive.
  std::vector<std::size_t> owned(n_gt);
  for (std::size_t g = 0; g < n_gt; ++g) owned[g] = count_owned(g);
  for (std::size_t g = 0; g < n_gt; ++g) {
    if (owned[g] > 0 || candidates[g].empty()) continue;
    for (const Candidate& c : candidates[g]) {
      int& owner = out.cell_owner[c.level][c.cell];
      if (owner >= 0 && owned[owner] < 2) continue;
      if (owner >= 0) --owned[owner];
      owner = static_cast<int>(g);
      owner_metric[c.level][c.cell] = c.log_metric;
      ++owned[g];
      break;
    }
  }

  for (std::size_t g = 0; g < n_gt; ++g) {
    std::vector<double> log_metrics;
    for (const Candidate& c : candidates[g]) {
      if (out.cell_owner[c.level][c.cell] == static_cast<int>(g)) {
        out.positives[g].push_back({c.level, c.cell, std::exp(c.log_metric), c.iou, 0.0});
        log_metrics.push_back(c.log_metric);
      }
    }
    // target = m / max(m) * max(IoU) over this GT's positives.
    double max_log = none;
    double max_iou = 0.0;
    for (std::size_t i = 0; i < out.positives[g].size(); ++i) {
      max_log = std::max(max_log, log_metrics[i]);
      max_iou = std::max(max_iou, out.positives[g][i].iou);
    }
    for (std::size_t i = 0; i < out.positives[g].size(); ++i) {
      out.positives[g][i].target_score = max_log == none ? 0.0 : std::exp(log_metrics[i] - max_log) * max_iou;
    }
  }
  return out;
}

}  // namespace yolortho::train
