#pragma once

#include <filesystem>
#include <string>

#include "yolortho/network.hpp"

namespace yolortho::nn {

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// Binary archive: magic, the ModelConfig as JSON text, then every named
/// parameter tensor with its shape. Doubles are stored little-endian.
void save_checkpoint(const Detector& model, const std::filesystem::path& file);

/// Rebuilds the detector from the embedded config and checks that every
/// stored tensor matches the shape the config implies.
Detector load_checkpoint(const std::filesystem::path& file);

}  // namespace yolortho::nn
