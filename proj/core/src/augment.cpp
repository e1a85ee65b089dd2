#include "yolortho/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "yolortho/error.hpp"

namespace yolortho::augment {

namespace {

struct Affine {
  // p' = A p + b
  double a00, a01, a10, a11, b0, b1;

  std::pair<double, double> apply(double x, double y) const {
    return {a00 * x + a01 * y + b0, a10 * x + a11 * y + b1};
  }
  double determinant() const { return a00 * a11 - a01 * a10; }
  Affine inverse() const {
    const double det = determinant();
    Affine inv{a11 / det, -a01 / det, -a10 / det, a00 / det, 0.0, 0.0};
    inv.b0 = -(inv.a00 * b0 + inv.a01 * b1);
    inv.b1 = -(inv.a10 * b0 + inv.a11 * b1);
    return inv;
  }
};

Affine make_affine(const AffineParams& p, int width, int height) {
  const double th = p.rotate_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th) * p.scale;
  const double s = std::sin(th) * p.scale;
  const double cx = width / 2.0;
  const double cy = height / 2.0;
  // Rotate and scale about the center, then translate.
  Affine m{c, -s, s, c, 0.0, 0.0};
  m.b0 = cx - (m.a00 * cx + m.a01 * cy) + p.translate_x;
  m.b1 = cy - (m.a10 * cx + m.a11 * cy) + p.translate_y;
  return m;
}

double sample_bilinear(const Image& img, double x, double y) {
  // Pixel centers sit at integer + 0.5.
  const double fx = x - 0.5;
  const double fy = y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double wx = fx - x0;
  const double wy = fy - y0;
  auto px = [&](int xi, int yi) {
    if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) return 0.0;
    return img.at(xi, yi);
  };
  return (px(x0, y0) * (1 - wx) + px(x0 + 1, y0) * wx) * (1 - wy) +
         (px(x0, y0 + 1) * (1 - wx) + px(x0 + 1, y0 + 1) * wx) * wy;
}

}  // namespace

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.scale = 0.0;
  c.rotate_deg = 0.0;
  c.translate = 0.0;
  c.flip_prob = 0.0;
  c.blur_sigmas = {0.0};
  return c;
}

Sample horizontal_flip(const Sample& sample) {
  Sample out;
  out.tier = sample.tier;
  const Image& in = sample.image;
  out.image = Image(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) out.image.at(in.width - 1 - x, y) = in.at(x, y);

  const double w = in.width;
  out.records.reserve(sample.records.size());
  for (const ToothRecord& r : sample.records) {
    ToothRecord f = r;
    f.box = {w - r.box.x_max, r.box.y_min, w - r.box.x_min, r.box.y_max};
    f.quadrant = flip_quadrant(r.quadrant);
    if (r.fdi) f.fdi = flip_fdi(*r.fdi);
    out.records.push_back(f);
  }
  return out;
}

Sample affine_transform(const Sample& sample, const AffineParams& params, double min_visibility) {
  if (params.is_identity()) return sample;
  const Image& in = sample.image;
  const Affine fwd = make_affine(params, in.width, in.height);
  if (!(fwd.determinant() > 0.0) || !std::isfinite(fwd.determinant())) {
    throw Error(ErrorKind::DegenerateTransform, "affine transform is not orientation-preserving");
  }
  const Affine inv = fwd.inverse();

  Sample out;
  out.tier = sample.tier;
  out.image = Image(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      const auto [sx, sy] = inv.apply(x + 0.5, y + 0.5);
      out.image.at(x, y) = sample_bilinear(in, sx, sy);
    }
  }

  for (const ToothRecord& r : sample.records) {
    const std::array<std::pair<double, double>, 4> corners = {
        fwd.apply(r.box.x_min, r.box.y_min), fwd.apply(r.box.x_max, r.box.y_min),
        fwd.apply(r.box.x_min, r.box.y_max), fwd.apply(r.box.x_max, r.box.y_max)};
    BoundingBox hull{corners[0].first, corners[0].second, corners[0].first, corners[0].second};
    for (const auto& [x, y] : corners) {
      hull.x_min = std::min(hull.x_min, x);
      hull.y_min = std::min(hull.y_min, y);
      hull.x_max = std::max(hull.x_max, x);
      hull.y_max = std::max(hull.y_max, y);
    }
    const BoundingBox clipped = clip_box(hull, in.width, in.height);
    if (!clipped.is_valid() || clipped.area() < min_visibility * hull.area()) continue;
    ToothRecord t = r;
    t.box = clipped;
    out.records.push_back(t);
  }
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  Image tmp(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * image.at(std::clamp(x + i, 0, image.width - 1), y);
      tmp.at(x, y) = acc;
    }
  Image out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp.at(x, std::clamp(y + i, 0, image.height - 1));
      out.at(x, y) = acc;
    }
  return out;
}

Sample apply_augmentations(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed) {
  if (cfg.scale < 0.0 || cfg.scale >= 1.0) {
    throw Error(ErrorKind::DegenerateTransform, "augment.scale must lie in [0, 1)");
  }
  if (cfg.rotate_deg < 0.0 || cfg.translate < 0.0 || cfg.flip_prob < 0.0 || cfg.flip_prob > 1.0) {
    throw Error(ErrorKind::InvalidConfig, "augmentation ranges must be non-negative");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto symmetric = [&](double r) { return r * (2.0 * unit(rng) - 1.0); };

  // Draw everything up front so the sequence does not depend on branches.
  const bool flip = unit(rng) < cfg.flip_prob;
  AffineParams p;
  p.scale = 1.0 + symmetric(cfg.scale);
  p.rotate_deg = symmetric(cfg.rotate_deg);
  p.translate_x = symmetric(cfg.translate) * sample.image.width;
  p.translate_y = symmetric(cfg.translate) * sample.image.height;
  const std::size_t blur_idx =
      cfg.blur_sigmas.empty() ? 0 : static_cast<std::size_t>(unit(rng) * cfg.blur_sigmas.size());
  const double sigma =
      cfg.blur_sigmas.empty() ? 0.0 : cfg.blur_sigmas[std::min(blur_idx, cfg.blur_sigmas.size() - 1)];

  Sample out = flip ? horizontal_flip(sample) : sample;
  out = affine_transform(out, p, cfg.min_visibility);
  out.image = gaussian_blur(out.image, sigma);
  return out;
}

}  // namespace yolortho::augment
