#include "yolortho/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "yolortho/error.hpp"

namespace yolortho {

namespace {

struct NetpbmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 1;
};

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (in && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw Error(ErrorKind::MalformedFile, "truncated netpbm header");
  return value;
}

NetpbmHeader read_header(std::istream& in) {
  NetpbmHeader h;
  in >> h.magic;
  if (h.magic != "P2" && h.magic != "P3" && h.magic != "P5" && h.magic != "P6") {
    throw Error(ErrorKind::MalformedFile, "unsupported image format '" + h.magic + "'");
  }
  h.width = read_header_int(in);
  h.height = read_header_int(in);
  h.maxval = read_header_int(in);
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    throw Error(ErrorKind::MalformedFile, "invalid netpbm dimensions");
  }
  in.get();  // single whitespace before raster
  return h;
}

}  // namespace

Image read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open image " + path.string());
  const NetpbmHeader h = read_header(in);
  const bool color = h.magic == "P3" || h.magic == "P6";
  const bool ascii = h.magic == "P2" || h.magic == "P3";
  const int comps = color ? 3 : 1;
  const int bytes = h.maxval > 255 ? 2 : 1;

  Image img(h.width, h.height);
  const std::size_t n = img.pixels.size();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int c = 0; c < comps; ++c) {
      int v = 0;
      if (ascii) {
        if (!(in >> v)) throw Error(ErrorKind::MalformedFile, "truncated raster in " + path.string());
      } else {
        unsigned char b[2] = {0, 0};
        if (!in.read(reinterpret_cast<char*>(b), bytes)) {
          throw Error(ErrorKind::MalformedFile, "truncated raster in " + path.string());
        }
        v = bytes == 2 ? (b[0] << 8) | b[1] : b[0];
      }
      acc += v;
    }
    img.pixels[i] = acc / (comps * static_cast<double>(h.maxval));
  }
  return img;
}

std::pair<int, int> netpbm_size(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open image " + path.string());
  const NetpbmHeader h = read_header(in);
  return {h.width, h.height};
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write image " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string raster(image.pixels.size(), '\0');
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    raster[i] = static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0)));
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
}

Image resize_bilinear(const Image& src, int width, int height) {
  if (width == src.width && height == src.height) return src;
  Image out(width, height);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = src.at(x0, y0) * (1 - wx) + src.at(x1, y0) * wx;
      const double bot = src.at(x0, y1) * (1 - wx) + src.at(x1, y1) * wx;
      out.at(x, y) = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

Letterbox letterbox(const Image& source, int size, double pad_value) {
  Letterbox lb;
  lb.scale = std::min(static_cast<double>(size) / source.width,
                      static_cast<double>(size) / source.height);
  const int w = std::max(1, static_cast<int>(std::lround(source.width * lb.scale)));
  const int h = std::max(1, static_cast<int>(std::lround(source.height * lb.scale)));
  const Image resized = resize_bilinear(source, std::min(w, size), std::min(h, size));
  lb.image = Image(size, size, pad_value);
  for (int y = 0; y < resized.height; ++y)
    for (int x = 0; x < resized.width; ++x) lb.image.at(x, y) = resized.at(x, y);
  return lb;
}

}  // namespace yolortho
