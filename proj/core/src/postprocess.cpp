#include "yolortho/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "yolortho/error.hpp"

namespace yolortho::post {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

// Square Hungarian solve with potentials u (rows) and v (columns) such that
// a(i, j) - u[i] - v[j] >= 0, with equality on the returned matching.
struct SquareSolution {
  std::vector<std::size_t> col_of_row;
  std::vector<double> u;
  std::vector<double> v;
};

SquareSolution hungarian(const std::vector<double>& a, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based internally; index 0 is the virtual root column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  SquareSolution s;
  s.col_of_row.assign(n, kNone);
  for (std::size_t j = 1; j <= n; ++j) s.col_of_row[p[j] - 1] = j - 1;
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  return s;
}

// Walks the optimal face (edges with zero reduced cost) to pick the
// lexicographically smallest optimal matching, one row at a time. Every
// perfect matching on tight edges is optimal for the dual (u, v).
class TightGraphSelector {
 public:
  TightGraphSelector(const std::vector<double>& a, std::size_t n, SquareSolution sol, double tol)
      : a_(a), n_(n), sol_(std::move(sol)), tol_(tol), row_of_col_(n, kNone), fixed_(n, 0) {
    for (std::size_t r = 0; r < n; ++r) row_of_col_[sol_.col_of_row[r]] = r;
  }

  bool tight(std::size_t r, std::size_t c) const {
    return a_[r * n_ + c] - sol_.u[r] - sol_.v[c] <= tol_;
  }

  // Pins row -> col when a tight perfect matching extending the pinned rows exists.
  bool try_fix(std::size_t row, std::size_t col) {
    if (!tight(row, col)) return false;
    const std::size_t old_col = sol_.col_of_row[row];
    if (old_col == col) {
      fixed_[row] = 1;
      return true;
    }
    const std::size_t displaced = row_of_col_[col];
    if (fixed_[displaced]) return false;

    // BFS over rows: the displaced row needs a new column; whoever held that
    // column moves on, until some row takes the column `row` vacates.
    std::vector<std::size_t> prev_row(n_, kNone);
    std::vector<char> seen_row(n_, 0);
    std::vector<std::size_t> queue = {displaced};
    seen_row[displaced] = 1;
    std::size_t last = kNone;
    for (std::size_t qi = 0; qi < queue.size() && last == kNone; ++qi) {
      const std::size_t r = queue[qi];
      for (std::size_t c = 0; c < n_; ++c) {
        if (c == col || !tight(r, c)) continue;
        if (c == old_col) {
          last = r;
          break;
        }
        const std::size_t mate = row_of_col_[c];
        if (fixed_[mate] || seen_row[mate]) continue;
        seen_row[mate] = 1;
        prev_row[mate] = r;
        queue.push_back(mate);
      }
    }
    if (last == kNone) return false;

    std::size_t r = last;
    std::size_t new_col = old_col;
    for (;;) {
      const std::size_t freed = sol_.col_of_row[r];
      sol_.col_of_row[r] = new_col;
      row_of_col_[new_col] = r;
      if (r == displaced) break;
      new_col = freed;
      r = prev_row[r];
    }
    sol_.col_of_row[row] = col;
    row_of_col_[col] = row;
    fixed_[row] = 1;
    return true;
  }

  std::size_t col_of(std::size_t row) const { return sol_.col_of_row[row]; }

 private:
  const std::vector<double>& a_;
  std::size_t n_;
  SquareSolution sol_;
  double tol_;
  std::vector<std::size_t> row_of_col_;
  std::vector<char> fixed_;
};

double sanitize_probability(double p) { return std::clamp(std::isfinite(p) ? p : 0.0, 0.0, 1.0); }

}  // namespace

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw Error(ErrorKind::InvalidArgument, "cost matrix data has the wrong size");
}

Matching solve_assignment(const CostMatrix& cost) {
  const std::size_t rows = cost.rows();
  const std::size_t cols = cost.cols();
  Matching out;
  if (rows == 0 || cols == 0) return out;

  double scale = 1.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = cost(r, c);
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::NonFiniteCost, "cost(" + std::to_string(r) + ", " + std::to_string(c) + ") is not finite");
      }
      scale = std::max(scale, std::abs(v));
    }

  // Pad to square with zero-cost dummy rows/columns.
  const std::size_t n = std::max(rows, cols);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) a[r * n + c] = cost(r, c);

  TightGraphSelector sel(a, n, hungarian(a, n), 1e-9 * scale * static_cast<double>(n));
  for (std::size_t r = 0; r < rows; ++r) {
    bool done = false;
    for (std::size_t c = 0; c < n && !done; ++c) {
      // Real columns first in ascending order; dummy columns mean "unmatched".
      done = sel.try_fix(r, c);
    }
  }

  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t c = sel.col_of(r);
    if (c < cols) {
      out.pairs.emplace_back(r, c);
      out.total_cost += cost(r, c);
    }
  }
  return out;
}

CostMatrix build_cost_matrix(std::span<const Detection> dets, CostKind kind) {
  CostMatrix m(dets.size(), kNumClasses);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    for (int k = 0; k < kNumClasses; ++k) {
      const double p = sanitize_probability(dets[d].class_probs[k]);
      m(d, k) = kind == CostKind::OneMinusP ? 1.0 - p : -std::log(std::max(p, 1e-12));
    }
  }
  return m;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_thr, double conf_thr) {
  if (iou_thr < 0.0 || iou_thr > 1.0 || conf_thr < 0.0 || conf_thr > 1.0) {
    throw Error(ErrorKind::InvalidArgument, "nms thresholds must lie in [0, 1]");
  }
  std::vector<const Detection*> sorted;
  for (const Detection& d : dets)
    if (d.confidence >= conf_thr) sorted.push_back(&d);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Detection* a, const Detection* b) { return a->confidence > b->confidence; });
  std::vector<Detection> kept;
  for (const Detection* d : sorted) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return box_iou(k.box, d->box) > iou_thr;
    });
    if (!suppressed) kept.push_back(*d);
  }
  return kept;
}

std::vector<Detection> correct_enumeration(std::span<const Detection> dets, CostKind kind) {
  if (dets.empty()) return {};
  // Canonical order: confidence, then geometry, then scores.
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    const Detection& d = dets[i];
    return std::make_tuple(-d.confidence, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max);
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = key(a), kb = key(b);
    if (ka != kb) return ka < kb;
    if (dets[a].class_probs != dets[b].class_probs) return dets[a].class_probs < dets[b].class_probs;
    return dets[a].attribute_probs.values < dets[b].attribute_probs.values;
  });

  std::vector<Detection> canonical;
  canonical.reserve(dets.size());
  for (std::size_t i : order) canonical.push_back(dets[i]);
  const Matching m = solve_assignment(build_cost_matrix(canonical, kind));

  std::vector<std::optional<FDILabel>> label(dets.size());
  for (const auto& [row, col] : m.pairs) label[order[row]] = fdi_from_class_index(static_cast<int>(col));

  std::vector<Detection> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (!label[i]) continue;
    Detection d = dets[i];
    d.assigned_fdi = label[i];
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> assign_argmax(std::span<const Detection> dets) {
  std::vector<Detection> out(dets.begin(), dets.end());
  for (Detection& d : out) d.assigned_fdi = fdi_from_class_index(d.argmax_class());
  return out;
}

std::vector<Detection> apply(std::span<const Detection> dets, const PostConfig& cfg) {
  const std::vector<Detection> kept = nms(dets, cfg.iou_thr, cfg.conf_thr);
  return cfg.enumeration ? correct_enumeration(kept, cfg.cost) : assign_argmax(kept);
}

}  // namespace yolortho::post
