#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "yolortho/dataio.hpp"
#include "yolortho/image.hpp"
#include "yolortho/types.hpp"

namespace yolortho::synth {

/// Procedural panoramic-like radiograph: an upper and a lower arch of
/// bright tooth blocks on a darker jaw. Viewed from the front, the
/// patient's right (quadrants 1 and 4) is on the image left. Molars are
/// wider than incisors. Each attribute has its own visual cue.
struct SyntheticConfig {
  int width = 256;
  int height = 128;
  double jitter = 1.0;           ///< max per-tooth offset in pixels
  double missing_prob = 0.0;     ///< chance a tooth is left out
  double attribute_prob = 0.15;  ///< per-tooth chance of each attribute
  double noise_sigma = 0.02;
};

struct SyntheticImage {
  Image image;
  std::vector<ToothRecord> records;  ///< disease-tier records
};

SyntheticImage generate_panoramic(const SyntheticConfig& cfg, std::uint64_t seed);

/// Writes `count` images as PGM files plus a canonical annotation file
/// (every image at disease tier) into `dir`; returns the index written.
dataio::DatasetIndex write_synthetic_dataset(const std::filesystem::path& dir, int count,
                                             const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace yolortho::synth
