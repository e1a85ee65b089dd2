#include "yolortho/predictions.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "yolortho/error.hpp"

namespace yolortho {

namespace {

using nlohmann::json;

json detection_to_json(const Detection& d) {
  json j;
  j["bbox"] = {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max};
  j["confidence"] = d.confidence;
  j["class_probs"] = d.class_probs;
  j["attribute_probs"] = d.attribute_probs.values;
  if (d.assigned_fdi) j["assigned_fdi"] = d.assigned_fdi->code();
  return j;
}

template <std::size_t N>
std::array<double, N> read_array(const json& j, const char* key) {
  const json& a = j.at(key);
  if (!a.is_array() || a.size() != N) {
    throw Error(ErrorKind::MalformedFile, std::string("\"") + key + "\" must hold " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = a[i].get<double>();
  return out;
}

Detection detection_from_json(const json& j) {
  Detection d;
  const auto b = read_array<4>(j, "bbox");
  d.box = {b[0], b[1], b[2], b[3]};
  d.confidence = j.at("confidence").get<double>();
  d.class_probs = read_array<kNumClasses>(j, "class_probs");
  d.attribute_probs.values = read_array<kNumAttributes>(j, "attribute_probs");
  if (j.contains("assigned_fdi") && !j["assigned_fdi"].is_null()) {
    try {
      d.assigned_fdi = FDILabel::from_code(j["assigned_fdi"].get<int>());
    } catch (const Error& e) {
      throw Error(ErrorKind::MalformedFile, std::string("assigned_fdi: ") + e.what());
    }
  }
  return d;
}

}  // namespace

std::string serialize_predictions(const std::vector<ImagePredictions>& preds) {
  json images = json::array();
  for (const ImagePredictions& p : preds) {
    json dets = json::array();
    for (const Detection& d : p.detections) dets.push_back(detection_to_json(d));
    images.push_back({{"image_id", p.image_id}, {"file_name", p.file_name}, {"detections", std::move(dets)}});
  }
  return json{{"images", std::move(images)}}.dump(1) + "\n";
}

std::vector<ImagePredictions> parse_predictions(std::string_view json_text) {
  std::vector<ImagePredictions> out;
  try {
    const json root = json::parse(json_text);
    for (const json& img : root.at("images")) {
      ImagePredictions p;
      p.image_id = img.at("image_id").get<std::int64_t>();
      p.file_name = img.value("file_name", std::string{});
      for (const json& d : img.at("detections")) p.detections.push_back(detection_from_json(d));
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedFile, std::string("prediction JSON: ") + e.what());
  }
  return out;
}

std::vector<ImagePredictions> read_predictions(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_predictions(ss.str());
}

void write_predictions(const std::vector<ImagePredictions>& preds, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + file.string());
  out << serialize_predictions(preds);
  if (!out) throw Error(ErrorKind::Io, "write failed: " + file.string());
}

}  // namespace yolortho
