#include "yolortho/inference.hpp"

#include "yolortho/postprocess.hpp"

namespace yolortho::nn {

std::vector<Detection> detect(const Detector& model, const Image& source, double conf_thr, double iou_thr) {
  const Letterbox lb = letterbox(source, model.config().input_size);
  const RawPredictions raw = model.forward(lb.image);
  std::vector<Detection> dets = decode_detections(raw, conf_thr);
  const double inv = 1.0 / lb.scale;
  std::vector<Detection> mapped;
  for (Detection d : dets) {
    d.box = clip_box({d.box.x_min * inv, d.box.y_min * inv, d.box.x_max * inv, d.box.y_max * inv},
                     source.width, source.height);
    if (d.box.is_valid()) mapped.push_back(d);
  }
  return post::nms(mapped, iou_thr, conf_thr);
}

}  // namespace yolortho::nn
