#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "yolortho/image.hpp"
#include "yolortho/layers.hpp"
#include "yolortho/types.hpp"

namespace yolortho::nn {

struct ModelConfig {
  int input_size = 256;
  double width_mult = 0.25;
  double depth_mult = 0.5;
  int reg_max = 16;
  int num_classes = kNumClasses;
  int num_attributes = kNumAttributes;
  bool coordconv_enabled = true;
  bool extra_upsample_enabled = true;

  /// Throws InvalidConfig when an invariant is violated.
  void validate() const;

  /// Output strides of the three prediction levels.
  std::array<int, 3> strides() const noexcept;
  int stage_channels(int stage) const noexcept;  ///< 0 = stem, 1..4 = stages
  int stage_blocks(int stage) const noexcept;    ///< residual blocks in stage 1..4
  int neck_channels() const noexcept;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Dense head outputs of one pyramid level, cell-major:
///   dfl_logits       [H][W][4 sides][reg_max + 1]   sides = left, top, right, bottom
///   class_logits     [H][W][32]
///   attribute_logits [H][W][4]
struct LevelPredictions {
  int stride = 0;
  int height = 0;
  int width = 0;
  int reg_max = 16;
  std::vector<double> dfl_logits;
  std::vector<double> class_logits;
  std::vector<double> attribute_logits;

  std::size_t cells() const noexcept { return static_cast<std::size_t>(height) * width; }
  int bins() const noexcept { return reg_max + 1; }

  std::span<const double> dfl(std::size_t cell, int side) const {
    return {dfl_logits.data() + (cell * 4 + side) * bins(), static_cast<std::size_t>(bins())};
  }
  std::span<const double> classes(std::size_t cell) const {
    return {class_logits.data() + cell * kNumClasses, kNumClasses};
  }
  std::span<const double> attributes(std::size_t cell) const {
    return {attribute_logits.data() + cell * kNumAttributes, kNumAttributes};
  }
  /// Pixel center of a cell.
  double center_x(std::size_t cell) const noexcept {
    return (static_cast<double>(cell % width) + 0.5) * stride;
  }
  double center_y(std::size_t cell) const noexcept {
    return (static_cast<double>(cell / width) + 0.5) * stride;
  }

  /// Same-shaped level filled with zeros (used for gradients).
  LevelPredictions zeros_like() const;
};

struct RawPredictions {
  int input_size = 0;
  std::array<LevelPredictions, 3> levels;

  RawPredictions zeros_like() const;
};

/// Named tensors backed by one contiguous buffer, so optimizers and
/// finite-difference probes can treat the model as a flat vector.
class ParameterStore {
 public:
  struct Slot {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  std::size_t add(std::string name, std::vector<int> shape);

  std::span<double> values(std::size_t slot) {
    return {values_.data() + slots_[slot].offset, slots_[slot].size};
  }
  std::span<const double> values(std::size_t slot) const {
    return {values_.data() + slots_[slot].offset, slots_[slot].size};
  }
  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  const std::vector<Slot>& slots() const noexcept { return slots_; }
  /// Index of the named slot; throws InvalidArgument when absent.
  std::size_t find(const std::string& name) const;

 private:
  std::vector<Slot> slots_;
  std::vector<double> values_;
};

struct ForwardTrace;

/// The detector: stride-32 backbone of stem + four stages (coordinate
/// convolutions when enabled), a top-down pyramid with lateral 1x1
/// connections and, when enabled, one extra upsampling stage so levels land
/// on strides 4/8/16 instead of 8/16/32; and a decoupled head per level with
/// independent box-distribution, class and attribute branches.
class Detector {
 public:
  explicit Detector(ModelConfig config);
  ~Detector();
  Detector(const Detector&);
  Detector& operator=(const Detector&);
  Detector(Detector&&) noexcept;
  Detector& operator=(Detector&&) noexcept;

  /// He-normal weights, zero biases, and prior-probability biases on the
  /// class and attribute predictors.
  void initialize(std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterStore& parameters() noexcept { return params_; }
  const ParameterStore& parameters() const noexcept { return params_; }

  RawPredictions forward(const Image& image) const;
  RawPredictions forward(const Image& image, ForwardTrace& trace) const;
  std::vector<RawPredictions> forward(std::span<const Image> batch) const;

  /// Accumulates d(loss)/d(parameters) into `param_grad` given
  /// d(loss)/d(raw outputs).
  void backward(const ForwardTrace& trace, const RawPredictions& grad,
                std::span<double> param_grad) const;

  /// Parameter slots of the attribute branches (their gradient is exactly
  /// zero whenever the attribute loss is masked).
  std::vector<std::size_t> attribute_head_slots() const;
  /// Conv layers with coordinate channels, by weight slot.
  std::vector<std::size_t> coord_conv_weight_slots() const;
  const ConvShape& conv_shape_for_weight_slot(std::size_t slot) const;

 private:
  RawPredictions run(const Image& image, ForwardTrace* trace) const;

  struct Impl;
  ModelConfig config_;
  ParameterStore params_;
  std::unique_ptr<Impl> impl_;
};

/// Opaque per-sample activations kept by forward() for backward().
struct ForwardTrace {
  struct Unit;
  std::vector<std::unique_ptr<Unit>> units;
  ForwardTrace();
  ~ForwardTrace();
  ForwardTrace(ForwardTrace&&) noexcept;
  ForwardTrace& operator=(ForwardTrace&&) noexcept;
};

/// A coordinate convolution: an ordinary convolution applied to
/// [input || coord_channels(H, W)]. `weight` has (C + 2) input slots.
FeatureMap coord_conv(const FeatureMap& input, std::span<const double> weight,
                      std::span<const double> bias, int out_channels, int kernel, int stride = 1);

/// Expected side distance in pixels: stride * sum_i i * softmax(logits)_i.
double expected_distance(std::span<const double> logits, int stride);

/// One box per cell from the distribution logits, clipped to the image.
std::vector<BoundingBox> decode_boxes(const LevelPredictions& level, double image_width,
                                      double image_height);

/// Converts dense outputs into detections whose confidence (the highest
/// class probability) is at least `conf_thr`.
std::vector<Detection> decode_detections(const RawPredictions& raw, double conf_thr);

}  // namespace yolortho::nn
