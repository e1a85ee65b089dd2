#include "yolortho/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"
#include "yolortho/error.hpp"

namespace yolortho::nn {

namespace {

constexpr char kMagic[8] = {'Y', 'O', 'R', 'T', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& file) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorKind::MalformedFile, "truncated checkpoint " + file.string());
  }
  return v;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j = {{"input_size", cfg.input_size},
                      {"width_mult", cfg.width_mult},
                      {"depth_mult", cfg.depth_mult},
                      {"reg_max", cfg.reg_max},
                      {"num_classes", cfg.num_classes},
                      {"num_attributes", cfg.num_attributes},
                      {"coordconv_enabled", cfg.coordconv_enabled},
                      {"extra_upsample_enabled", cfg.extra_upsample_enabled}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.input_size = j.at("input_size").get<int>();
    cfg.width_mult = j.at("width_mult").get<double>();
    cfg.depth_mult = j.at("depth_mult").get<double>();
    cfg.reg_max = j.at("reg_max").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.num_attributes = j.at("num_attributes").get<int>();
    cfg.coordconv_enabled = j.at("coordconv_enabled").get<bool>();
    cfg.extra_upsample_enabled = j.at("extra_upsample_enabled").get<bool>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedFile, std::string("bad model config in checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Detector& model, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + file.string());
  out.write(kMagic, sizeof(kMagic));
  const std::string cfg = model_config_to_json(model.config());
  put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  const ParameterStore& params = model.parameters();
  put<std::uint64_t>(out, params.slots().size());
  for (std::size_t i = 0; i < params.slots().size(); ++i) {
    const auto& slot = params.slots()[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(slot.name.size()));
    out.write(slot.name.data(), static_cast<std::streamsize>(slot.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(slot.shape.size()));
    for (int d : slot.shape) put<std::int32_t>(out, d);
    const auto values = params.values(i);
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing checkpoint " + file.string());
}

Detector load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + file.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::MalformedFile, file.string() + " is not a yolortho checkpoint");
  }
  const auto cfg_len = get<std::uint64_t>(in, file);
  if (cfg_len > (1u << 20)) throw Error(ErrorKind::MalformedFile, "implausible config length");
  std::string cfg_text(cfg_len, '\0');
  if (!in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len))) {
    throw Error(ErrorKind::MalformedFile, "truncated checkpoint " + file.string());
  }
  Detector model(model_config_from_json(cfg_text));
  ParameterStore& params = model.parameters();

  const auto n = get<std::uint64_t>(in, file);
  if (n != params.slots().size()) {
    throw Error(ErrorKind::ShapeMismatch, "checkpoint holds " + std::to_string(n) + " tensors, config implies " +
                                              std::to_string(params.slots().size()));
  }
  std::map<std::string, bool> seen;
  for (std::uint64_t t = 0; t < n; ++t) {
    const auto name_len = get<std::uint32_t>(in, file);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw Error(ErrorKind::MalformedFile, "truncated tensor name");
    const auto ndim = get<std::uint32_t>(in, file);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = get<std::int32_t>(in, file);
    std::size_t slot = 0;
    try {
      slot = params.find(name);
    } catch (const Error&) {
      throw Error(ErrorKind::ShapeMismatch, "checkpoint tensor " + name + " is not part of the configured model");
    }
    if (params.slots()[slot].shape != shape) {
      throw Error(ErrorKind::ShapeMismatch, "tensor " + name + " has a shape the config does not imply");
    }
    if (seen[name]) throw Error(ErrorKind::MalformedFile, "tensor " + name + " stored twice");
    seen[name] = true;
    auto values = params.values(slot);
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw Error(ErrorKind::MalformedFile, "truncated tensor " + name);
    }
  }
  return model;
}

}  // namespace yolortho::nn
