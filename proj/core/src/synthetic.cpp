#include "yolortho/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "yolortho/error.hpp"

namespace yolortho::synth {

namespace {

// Relative widths by position 1 (central incisor) .. 8 (third molar).
constexpr double kToothWidth[8] = {1.0, 0.85, 0.9, 0.9, 0.95, 1.35, 1.3, 1.2};

constexpr int slot(Attribute a) { return static_cast<int>(a); }

void fill_rect(Image& img, double x0, double y0, double x1, double y1, double value) {
  const int xa = std::max(0, static_cast<int>(std::floor(x0)));
  const int ya = std::max(0, static_cast<int>(std::floor(y0)));
  const int xb = std::min(img.width, static_cast<int>(std::ceil(x1)));
  const int yb = std::min(img.height, static_cast<int>(std::ceil(y1)));
  for (int y = ya; y < yb; ++y)
    for (int x = xa; x < xb; ++x) img.at(x, y) = value;
}

void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, double value) {
  const int xa = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int xb = std::min(img.width - 1, static_cast<int>(std::ceil(cx + rx)));
  const int ya = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int yb = std::min(img.height - 1, static_cast<int>(std::ceil(cy + ry)));
  for (int y = ya; y <= yb; ++y)
    for (int x = xa; x <= xb; ++x) {
      const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) img.at(x, y) = value;
    }
}

void draw_tooth(Image& img, const BoundingBox& b, bool upper, const AttributeFlags& attrs) {
  const double w = b.width(), h = b.height();
  // Crown faces the occlusal plane (bottom of upper teeth, top of lower).
  const double crown_h = 0.4 * h;
  const double crown_y0 = upper ? b.y_max - crown_h : b.y_min;
  const double root_y0 = upper ? b.y_min : b.y_min + crown_h;
  const double root_inset = 0.2 * w;
  fill_rect(img, b.x_min + root_inset, root_y0, b.x_max - root_inset, root_y0 + h - crown_h, 0.62);
  fill_rect(img, b.x_min, crown_y0, b.x_max, crown_y0 + crown_h, 0.9);

  if (attrs.values[slot(Attribute::IsImpacted)]) {
    // Diagonal banding across the whole tooth.
    for (int y = static_cast<int>(b.y_min); y < static_cast<int>(b.y_max) && y < img.height; ++y)
      for (int x = static_cast<int>(b.x_min); x < static_cast<int>(b.x_max) && x < img.width; ++x)
        if (((x + y) / 2) % 2 == 0) img.at(x, y) = 0.45;
  }
  const double cx = 0.5 * (b.x_min + b.x_max);
  const double crown_cy = crown_y0 + 0.5 * crown_h;
  if (attrs.values[slot(Attribute::HasCaries)]) {
    fill_rect(img, cx - 0.2 * w, crown_cy - 0.15 * crown_h, cx + 0.2 * w, crown_cy + 0.15 * crown_h, 0.2);
  }
  if (attrs.values[slot(Attribute::HasDeepCaries)]) {
    fill_rect(img, b.x_min + 0.15 * w, crown_y0, b.x_max - 0.15 * w, crown_y0 + crown_h, 0.3);
  }
  if (attrs.values[slot(Attribute::HasLesion)]) {
    const double apex_y = upper ? b.y_min + 0.12 * h : b.y_max - 0.12 * h;
    fill_ellipse(img, cx, apex_y, 0.45 * w, 0.12 * h, 0.05);
  }
}

}  // namespace

SyntheticImage generate_panoramic(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.width < 64 || cfg.height < 32) throw Error(ErrorKind::InvalidArgument, "synthetic image too small");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

  SyntheticImage out;
  out.image = Image(cfg.width, cfg.height, 0.1);
  const double W = cfg.width, H = cfg.height;

  // Jaw: a lighter band around the occlusal plane.
  fill_ellipse(out.image, 0.5 * W, 0.5 * H, 0.49 * W, 0.42 * H, 0.25);

  double total_width = 0.0;
  for (double tw : kToothWidth) total_width += 2.0 * tw;
  const double margin = 0.06 * W;
  const double unit_w = (W - 2.0 * margin) / total_width;
  const double gap = 0.08 * unit_w;

  // Upper arch (quadrants 1 | 2), lower arch (quadrants 4 | 3).
  for (int arch = 0; arch < 2; ++arch) {
    const bool upper = arch == 0;
    const int left_q = upper ? 1 : 4;
    const int right_q = upper ? 2 : 3;
    double x = margin;
    for (int k = 0; k < 16; ++k) {
      const int quadrant = k < 8 ? left_q : right_q;
      const int position = k < 8 ? 8 - k : k - 7;
      const double tw = kToothWidth[position - 1] * unit_w;
      // Teeth shorten toward the back of the arch.
      const double th = (0.34 - 0.012 * (position - 1)) * H;
      const double jx = (unit(rng) * 2.0 - 1.0) * cfg.jitter;
      const double jy = (unit(rng) * 2.0 - 1.0) * cfg.jitter;
      const bool missing = unit(rng) < cfg.missing_prob;
      AttributeFlags attrs;
      for (int a = 0; a < kNumAttributes; ++a) attrs.values[a] = unit(rng) < cfg.attribute_prob;
      const double occlusal = 0.5 * H + (upper ? -0.02 * H : 0.02 * H);
      BoundingBox box;
      box.x_min = x + gap + jx;
      box.x_max = x + tw - gap + jx;
      box.y_min = upper ? occlusal - th + jy : occlusal + jy;
      box.y_max = box.y_min + th;
      x += tw;
      if (missing) continue;
      box = clip_box(box, W, H);
      draw_tooth(out.image, box, upper, attrs);
      out.records.push_back(make_record(box, FDILabel(quadrant, position), attrs));
    }
  }
  for (double& p : out.image.pixels) p = std::clamp(p + noise(rng), 0.0, 1.0);
  return out;
}

dataio::DatasetIndex write_synthetic_dataset(const std::filesystem::path& dir, int count,
                                             const SyntheticConfig& cfg, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorKind::InvalidArgument, "synthetic image count must be positive");
  std::filesystem::create_directories(dir);
  dataio::DatasetIndex index;
  for (int i = 0; i < count; ++i) {
    const SyntheticImage s = generate_panoramic(cfg, seed + static_cast<std::uint64_t>(i));
    const std::string name = "synth_" + std::to_string(i) + ".pgm";
    write_pgm(dir / name, s.image);
    index.images.push_back({i, name, cfg.width, cfg.height, dataio::AnnotationTier::Disease});
    index.records[i] = s.records;
  }
  dataio::write_annotations(index, dir / "annotations.json");
  return index;
}

}  // namespace yolortho::synth
