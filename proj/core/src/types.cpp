#include "yolortho/types.hpp"

#include <algorithm>
#include <cmath>

#include "yolortho/error.hpp"

namespace yolortho {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MalformedFile: return "MalformedFile";
    case ErrorKind::UnknownCategory: return "UnknownCategory";
    case ErrorKind::TierMismatch: return "TierMismatch";
    case ErrorKind::ConflictingFDI: return "ConflictingFDI";
    case ErrorKind::DegenerateTransform: return "DegenerateTransform";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidTier: return "InvalidTier";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::NonFiniteCost: return "NonFiniteCost";
    case ErrorKind::MissingAssignedLabels: return "MissingAssignedLabels";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

FDILabel::FDILabel(int quadrant, int position) : quadrant_(quadrant), position_(position) {
  if (quadrant < 1 || quadrant > kNumQuadrants || position < 1 ||
      position > kPositionsPerQuadrant) {
    throw Error(ErrorKind::InvalidArgument,
                "invalid FDI label: quadrant " + std::to_string(quadrant) + ", position " +
                    std::to_string(position));
  }
}

FDILabel FDILabel::from_code(int code) { return FDILabel(code / 10, code % 10); }

FDILabel FDILabel::from_class_index(int index) { return fdi_from_class_index(index); }

int class_index(const FDILabel& fdi) noexcept {
  return kPositionsPerQuadrant * (fdi.quadrant() - 1) + (fdi.position() - 1);
}

FDILabel fdi_from_class_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw Error(ErrorKind::InvalidArgument, "class index out of range: " + std::to_string(index));
  }
  return FDILabel(index / kPositionsPerQuadrant + 1, index % kPositionsPerQuadrant + 1);
}

int flip_quadrant(int quadrant) {
  if (quadrant < 1 || quadrant > kNumQuadrants) {
    throw Error(ErrorKind::InvalidArgument, "invalid quadrant " + std::to_string(quadrant));
  }
  // 1<->2, 3<->4: toggle the low bit of (quadrant - 1).
  return ((quadrant - 1) ^ 1) + 1;
}

FDILabel flip_fdi(const FDILabel& fdi) noexcept {
  return FDILabel(((fdi.quadrant() - 1) ^ 1) + 1, fdi.position());
}

std::string attribute_name(Attribute a) {
  switch (a) {
    case Attribute::IsImpacted: return "is_impacted";
    case Attribute::HasCaries: return "has_caries";
    case Attribute::HasDeepCaries: return "has_deepcaries";
    case Attribute::HasLesion: return "has_lesion";
  }
  return "unknown";
}

AttributeFlags attribute_or(const AttributeFlags& a, const AttributeFlags& b) noexcept {
  AttributeFlags out;
  for (std::size_t i = 0; i < kNumAttributes; ++i) out[i] = a[i] || b[i];
  return out;
}

bool any(const AttributeFlags& a) noexcept {
  return std::any_of(a.values.begin(), a.values.end(), [](bool v) { return v; });
}

double BoundingBox::area() const noexcept {
  return std::max(0.0, width()) * std::max(0.0, height());
}

bool BoundingBox::is_valid() const noexcept {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min >= 0.0 && y_min >= 0.0 && x_min < x_max &&
         y_min < y_max;
}

double box_iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BoundingBox box_union(const BoundingBox& a, const BoundingBox& b) noexcept {
  return {std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min), std::max(a.x_max, b.x_max),
          std::max(a.y_max, b.y_max)};
}

BoundingBox clip_box(const BoundingBox& box, double width, double height) noexcept {
  return {std::clamp(box.x_min, 0.0, width), std::clamp(box.y_min, 0.0, height),
          std::clamp(box.x_max, 0.0, width), std::clamp(box.y_max, 0.0, height)};
}

ToothRecord make_record(const BoundingBox& box, FDILabel fdi,
                        std::optional<AttributeFlags> attributes, RecordSource source) {
  ToothRecord r;
  r.box = box;
  r.quadrant = fdi.quadrant();
  r.fdi = fdi;
  r.attributes = attributes;
  r.source = source;
  return r;
}

int Detection::argmax_class() const noexcept {
  return static_cast<int>(std::max_element(class_probs.begin(), class_probs.end()) -
                          class_probs.begin());
}

}  // namespace yolortho
