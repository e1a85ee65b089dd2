#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace yolortho::nn {

/// Dense channel-major (C x H x W) feature map in double precision.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

/// Two-channel map of normalized pixel positions: channel 0 is x running
/// -1 (left) to +1 (right), channel 1 is y running -1 (top) to +1 (bottom).
/// A dimension of size 1 maps to 0.
FeatureMap coord_channels(int height, int width);

struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  bool coord = false;  ///< append coord_channels() to the input

  int total_in_channels() const noexcept { return in_channels + (coord ? 2 : 0); }
  int padding() const noexcept { return kernel / 2; }
  std::size_t weight_size() const noexcept {
    return static_cast<std::size_t>(out_channels) * total_in_channels() * kernel * kernel;
  }
  int out_extent(int in_extent) const noexcept {
    return (in_extent + 2 * padding() - kernel) / stride + 1;
  }
};

struct ConvCache {
  std::vector<double> columns;  // im2col of the (coord-augmented) input
  int in_height = 0;
  int in_width = 0;
  int out_height = 0;
  int out_width = 0;
};

/// Weight layout is [out][in_total][k][k]; coordinate channels occupy the
/// last two input-channel slots.
FeatureMap conv2d_forward(const ConvShape& shape, std::span<const double> weight,
                          std::span<const double> bias, const FeatureMap& input,
                          ConvCache* cache = nullptr);

/// Accumulates into grad_weight / grad_bias and returns the gradient with
/// respect to the non-coordinate input channels.
FeatureMap conv2d_backward(const ConvShape& shape, std::span<const double> weight,
                           const ConvCache& cache, const FeatureMap& grad_output,
                           std::span<double> grad_weight, std::span<double> grad_bias);

void silu_inplace(std::span<double> values);
/// grad *= d silu(pre) / d pre
void silu_backward_inplace(std::span<const double> pre_activation, std::span<double> grad);

FeatureMap upsample2x(const FeatureMap& input);
FeatureMap upsample2x_backward(const FeatureMap& grad_output);

void add_inplace(FeatureMap& target, const FeatureMap& other);

}  // namespace yolortho::nn
