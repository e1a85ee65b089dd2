#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace yolortho {

/// Single-channel image with intensities normalized to [0, 1], row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Reads binary or ASCII netpbm (P2/P5 grayscale, P3/P6 color). Color
/// files are reduced to one channel by averaging the three components.
Image read_netpbm(const std::filesystem::path& path);

/// Writes an 8-bit binary PGM, clamping to [0, 1] before quantizing.
void write_pgm(const std::filesystem::path& path, const Image& image);

/// Reads only the header of a netpbm file.
std::pair<int, int> netpbm_size(const std::filesystem::path& path);

/// Aspect-preserving resize into a size x size canvas, padded at the
/// bottom/right. `scale` maps source pixels to canvas pixels.
struct Letterbox {
  Image image;
  double scale = 1.0;
};
Letterbox letterbox(const Image& source, int size, double pad_value = 0.0);

Image resize_bilinear(const Image& source, int width, int height);

}  // namespace yolortho
