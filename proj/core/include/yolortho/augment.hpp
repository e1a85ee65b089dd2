#pragma once

#include <cstdint>
#include <vector>

#include "yolortho/dataio.hpp"
#include "yolortho/image.hpp"
#include "yolortho/types.hpp"

namespace yolortho::augment {

struct Sample {
  Image image;
  std::vector<ToothRecord> records;
  dataio::AnnotationTier tier = dataio::AnnotationTier::Disease;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct AugmentConfig {
  double scale = 0.2;        ///< zoom drawn from [1 - scale, 1 + scale]
  double rotate_deg = 10.0;  ///< rotation drawn from [-rotate_deg, +rotate_deg]
  double translate = 0.1;    ///< shift drawn from [-translate, +translate] of the image size
  double flip_prob = 0.5;
  std::vector<double> blur_sigmas = {0.0, 0.5, 1.0};
  double min_visibility = 0.25;

  /// A configuration that leaves every sample untouched.
  static AugmentConfig identity();
};

/// Explicit affine parameters about the image center; translation in pixels.
struct AffineParams {
  double scale = 1.0;
  double rotate_deg = 0.0;
  double translate_x = 0.0;
  double translate_y = 0.0;

  bool is_identity() const noexcept {
    return scale == 1.0 && rotate_deg == 0.0 && translate_x == 0.0 && translate_y == 0.0;
  }
};

/// Mirrors the image about its vertical axis. Boxes map to
/// (W - x_max, y_min, W - x_min, y_max); FDI labels and quadrant-only
/// records swap sides (1<->2, 3<->4); attributes are unchanged.
Sample horizontal_flip(const Sample& sample);

/// Warps pixels (bilinear, zero fill) and boxes by the same affine map.
/// Boxes become the axis-aligned hull of their transformed corners, are
/// clipped to the image, and are dropped when the clipped area is below
/// `min_visibility` of the unclipped hull area.
Sample affine_transform(const Sample& sample, const AffineParams& params, double min_visibility);

/// Separable Gaussian blur with edge clamping; sigma <= 0 returns the input.
Image gaussian_blur(const Image& image, double sigma);

/// Draws flip, affine and blur parameters from `cfg` with a generator
/// seeded by `seed`, so equal inputs give byte-identical outputs.
Sample apply_augmentations(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace yolortho::augment
