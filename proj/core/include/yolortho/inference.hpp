#pragma once

#include <vector>

#include "yolortho/image.hpp"
#include "yolortho/network.hpp"
#include "yolortho/types.hpp"

namespace yolortho::nn {

/// Letterboxes `source` to the model input, runs the network, decodes
/// detections at conf_thr, applies class-agnostic NMS at iou_thr and maps
/// boxes back to source pixels (clipped to the source image).
std::vector<Detection> detect(const Detector& model, const Image& source, double conf_thr, double iou_thr);

}  // namespace yolortho::nn
