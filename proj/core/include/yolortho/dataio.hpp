#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "yolortho/types.hpp"

namespace yolortho::dataio {

/// Which label fields an image carries: quadrant only; quadrant and
/// enumeration; quadrant, enumeration and disease.
enum class AnnotationTier { Quadrant, Enumeration, Disease };

std::string_view to_string(AnnotationTier tier) noexcept;
AnnotationTier parse_tier(std::string_view name);

struct ImageEntry {
  std::int64_t image_id = 0;
  std::string file_path;
  int width = 0;
  int height = 0;
  AnnotationTier tier = AnnotationTier::Disease;

  friend bool operator==(const ImageEntry&, const ImageEntry&) = default;
};

struct DatasetIndex {
  std::vector<ImageEntry> images;
  std::map<std::int64_t, std::vector<ToothRecord>> records;

  const ImageEntry* find_image(std::int64_t id) const;
  std::size_t record_count() const;

  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

/// Parses the canonical annotation JSON. Every image is assigned `tier`;
/// a per-image "tier" field, when present, must agree with it.
DatasetIndex parse_annotations(std::string_view json_text, AnnotationTier tier);
DatasetIndex import_annotations(const std::filesystem::path& file, AnnotationTier tier);

/// Reads a canonical file in which every image declares its own tier (the
/// format written by export_annotations).
DatasetIndex parse_dataset(std::string_view json_text);
DatasetIndex import_dataset(const std::filesystem::path& file);

/// Canonical JSON with 0-based category tables, per-image tiers, and an
/// "attributes" flag array on records carrying more than one diagnosis.
std::string export_annotations(const DatasetIndex& index);
void write_annotations(const DatasetIndex& index, const std::filesystem::path& file);

/// Appends `other` into `into`; image ids must not collide.
void append_dataset(DatasetIndex& into, const DatasetIndex& other);

/// Normalizes a diagnosis name (case, whitespace, '_' and '-') and maps it
/// to an attribute slot; nullopt for names outside the four known.
std::optional<Attribute> attribute_from_name(std::string_view name);

/// Collapses duplicate boxes of one tooth: single-linkage clusters on
/// IoU >= iou_min become one record with the union box and OR-ed
/// attributes, repeated until nothing merges (so the result is idempotent).
/// Cluster order follows the first member's input position.
std::vector<ToothRecord> merge_colocated_boxes(std::span<const ToothRecord> records,
                                               double iou_min = 0.9);

struct FuseResult {
  std::vector<ToothRecord> records;
  std::size_t accepted = 0;
  std::size_t dropped_low_confidence = 0;
  std::size_t dropped_overlap = 0;
  std::size_t dropped_duplicate_fdi = 0;
};

/// Adds healthy teeth from a pseudo-labeling detector to the disease-tier
/// records of one image. Pseudo detections are visited by descending
/// confidence; each one with confidence >= conf_min, IoU < iou_max against
/// every annotated box, and an argmax FDI not yet present becomes a
/// pseudo-sourced record with all attributes false.
FuseResult fuse_pseudo_labels(std::span<const ToothRecord> annotated,
                              std::span<const Detection> pseudo, double conf_min = 0.5,
                              double iou_max = 0.5);

}  // namespace yolortho::dataio
