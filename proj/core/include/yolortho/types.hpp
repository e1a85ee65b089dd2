#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>

namespace yolortho {

inline constexpr int kNumClasses = 32;
inline constexpr int kNumAttributes = 4;
inline constexpr int kNumQuadrants = 4;
inline constexpr int kPositionsPerQuadrant = 8;

/// A permanent-dentition tooth in FDI notation: quadrant 1-4, position 1-8.
/// Construction validates the range, so every live FDILabel is one of the 32
/// codes 11..18, 21..28, 31..38, 41..48.
class FDILabel {
 public:
  FDILabel(int quadrant, int position);

  static FDILabel from_code(int code);
  static FDILabel from_class_index(int index);

  int quadrant() const noexcept { return quadrant_; }
  int position() const noexcept { return position_; }
  int code() const noexcept { return 10 * quadrant_ + position_; }

  friend bool operator==(const FDILabel&, const FDILabel&) = default;
  friend auto operator<=>(const FDILabel& a, const FDILabel& b) {
    return a.code() <=> b.code();
  }

 private:
  int quadrant_;
  int position_;
};

/// Quadrant-major class index: FDI 11 -> 0, 18 -> 7, 21 -> 8, ..., 48 -> 31.
int class_index(const FDILabel& fdi) noexcept;
FDILabel fdi_from_class_index(int index);

/// Left-right mirror of the dentition: quadrants 1<->2 and 3<->4.
FDILabel flip_fdi(const FDILabel& fdi) noexcept;
int flip_quadrant(int quadrant);

enum class Attribute : int { IsImpacted = 0, HasCaries = 1, HasDeepCaries = 2, HasLesion = 3 };

std::string attribute_name(Attribute a);

/// Four disease flags in fixed order (is_impacted, has_caries,
/// has_deepcaries, has_lesion). T is bool for labels and double for
/// predicted probabilities.
template <typename T>
struct AttributeVector {
  std::array<T, kNumAttributes> values{};

  T& operator[](Attribute a) { return values[static_cast<std::size_t>(a)]; }
  const T& operator[](Attribute a) const { return values[static_cast<std::size_t>(a)]; }
  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }

  friend bool operator==(const AttributeVector&, const AttributeVector&) = default;
};

using AttributeFlags = AttributeVector<bool>;
using AttributeProbs = AttributeVector<double>;

AttributeFlags attribute_or(const AttributeFlags& a, const AttributeFlags& b) noexcept;
bool any(const AttributeFlags& a) noexcept;

/// Axis-aligned box in corner form, pixel units.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept;

  /// True when finite, non-negative and with strictly positive extent.
  bool is_valid() const noexcept;

  static BoundingBox from_xywh(double x, double y, double w, double h) noexcept {
    return {x, y, x + w, y + h};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

double box_iou(const BoundingBox& a, const BoundingBox& b) noexcept;
BoundingBox box_union(const BoundingBox& a, const BoundingBox& b) noexcept;
BoundingBox clip_box(const BoundingBox& box, double width, double height) noexcept;

enum class RecordSource { Annotated, Pseudo };

/// One ground-truth tooth. Quadrant-tier records carry only `quadrant`;
/// enumeration-tier records add `fdi`; disease-tier records add
/// `attributes`. When `fdi` is set, `quadrant` equals fdi->quadrant().
struct ToothRecord {
  BoundingBox box;
  int quadrant = 0;
  std::optional<FDILabel> fdi;
  std::optional<AttributeFlags> attributes;
  RecordSource source = RecordSource::Annotated;

  friend bool operator==(const ToothRecord&, const ToothRecord&) = default;
};

ToothRecord make_record(const BoundingBox& box, FDILabel fdi,
                        std::optional<AttributeFlags> attributes = std::nullopt,
                        RecordSource source = RecordSource::Annotated);

/// Detector output for one object. class_probs are independent sigmoid
/// scores. `assigned_fdi` is filled in by the enumeration post-process.
struct Detection {
  BoundingBox box;
  std::array<double, kNumClasses> class_probs{};
  AttributeProbs attribute_probs;
  double confidence = 0.0;
  std::optional<FDILabel> assigned_fdi;

  /// Class with the highest probability; ties go to the lowest index.
  int argmax_class() const noexcept;

  friend bool operator==(const Detection&, const Detection&) = default;
};

}  // namespace yolortho
