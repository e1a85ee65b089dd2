#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "yolortho/types.hpp"

namespace yolortho::post {

/// Dense row-major rectangular cost matrix.
class CostMatrix {
 public:
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

struct Matching {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  ///< (row, column), sorted by row
  double total_cost = 0.0;
};

/// Minimum-cost rectangular assignment of min(rows, cols) pairs
/// (shortest-augmenting-path Hungarian method, O(max(n, m)^3)). Among
/// optimal matchings the lexicographically smallest (row, column) sequence
/// is returned. Throws NonFiniteCost.
Matching solve_assignment(const CostMatrix& cost);

enum class CostKind { OneMinusP, NegLog };

/// rows = detections, columns = the 32 FDI classes.
CostMatrix build_cost_matrix(std::span<const Detection> dets, CostKind kind = CostKind::OneMinusP);

/// Drops detections below conf_thr, sorts by confidence and greedily
/// suppresses any box overlapping a kept one at IoU > iou_thr,
/// regardless of class.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_thr = 0.7, double conf_thr = 0.25);

/// Relabels detections so each FDI is used at most once, minimizing the
/// summed cost. Only `assigned_fdi` changes; detections left without a
/// column (possible only beyond 32) are removed. Detections are solved in a
/// canonical order, so the result does not depend on input order; survivors
/// keep their input order.
std::vector<Detection> correct_enumeration(std::span<const Detection> dets,
                                           CostKind kind = CostKind::OneMinusP);

/// Sets assigned_fdi to each detection's argmax class (the post-process-off path).
std::vector<Detection> assign_argmax(std::span<const Detection> dets);

struct PostConfig {
  double iou_thr = 0.7;
  double conf_thr = 0.25;
  CostKind cost = CostKind::OneMinusP;
  bool enumeration = true;  ///< false: label each detection with its argmax class
};

/// NMS followed by the enumeration correction (or argmax labelling).
/// NMS is idempotent, so re-running this on its own output changes nothing.
std::vector<Detection> apply(std::span<const Detection> dets, const PostConfig& cfg);

}  // namespace yolortho::post
