#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "yolortho/types.hpp"

namespace yolortho {

struct ImagePredictions {
  std::int64_t image_id = 0;
  std::string file_name;
  std::vector<Detection> detections;

  friend bool operator==(const ImagePredictions&, const ImagePredictions&) = default;
};

/// Prediction JSON: {"images": [{"image_id", "file_name", "detections": [
///   {"bbox": [x_min, y_min, x_max, y_max], "confidence", "class_probs": [32],
///    "attribute_probs": [4], "assigned_fdi"?}]}]}
/// Doubles are written in shortest round-trip form, so parse(serialize(x)) == x.
std::string serialize_predictions(const std::vector<ImagePredictions>& preds);
std::vector<ImagePredictions> parse_predictions(std::string_view json_text);

std::vector<ImagePredictions> read_predictions(const std::filesystem::path& file);
void write_predictions(const std::vector<ImagePredictions>& preds, const std::filesystem::path& file);

}  // namespace yolortho
