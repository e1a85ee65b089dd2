#include "yolortho/layers.hpp"

#include <Eigen/Core>
#include <cmath>

#include "yolortho/error.hpp"

namespace yolortho::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

double linspace_at(int i, int n) {
  if (n <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void im2col(const ConvShape& s, const FeatureMap& in, int out_h, int out_w,
            std::vector<double>& cols) {
  const int k = s.kernel;
  const int pad = s.padding();
  const int total_c = s.total_in_channels();
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  cols.assign(static_cast<std::size_t>(total_c) * k * k * out_plane, 0.0);

  auto channel_value = [&](int c, int y, int x) -> double {
    if (c < in.channels) return in.at(c, y, x);
    return c == in.channels ? linspace_at(x, in.width) : linspace_at(y, in.height);
  };

  std::size_t row = 0;
  for (int c = 0; c < total_c; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = cols.data() + row * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - pad + kx;
            if (ix < 0 || ix >= in.width) continue;
            dst[static_cast<std::size_t>(oy) * out_w + ox] = channel_value(c, iy, ix);
          }
        }
      }
    }
  }
}

void col2im(const ConvShape& s, const std::vector<double>& cols, int out_h, int out_w,
            FeatureMap& grad_in) {
  const int k = s.kernel;
  const int pad = s.padding();
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  std::size_t row = 0;
  // Only real input channels receive gradient; coordinate rows are skipped.
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = cols.data() + row * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - pad + ky;
          if (iy < 0 || iy >= grad_in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - pad + kx;
            if (ix < 0 || ix >= grad_in.width) continue;
            grad_in.at(c, iy, ix) += src[static_cast<std::size_t>(oy) * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

FeatureMap coord_channels(int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorKind::InvalidArgument, "coord_channels needs a non-empty grid");
  }
  FeatureMap out(2, height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      out.at(0, y, x) = linspace_at(x, width);
      out.at(1, y, x) = linspace_at(y, height);
    }
  }
  return out;
}

FeatureMap conv2d_forward(const ConvShape& s, std::span<const double> weight,
                          std::span<const double> bias, const FeatureMap& input,
                          ConvCache* cache) {
  if (input.channels != s.in_channels) {
    throw Error(ErrorKind::ShapeMismatch, "conv input has " + std::to_string(input.channels) +
                                              " channels, expected " +
                                              std::to_string(s.in_channels));
  }
  if (weight.size() != s.weight_size() || bias.size() != static_cast<std::size_t>(s.out_channels)) {
    throw Error(ErrorKind::ShapeMismatch, "conv parameter size mismatch");
  }
  const int out_h = s.out_extent(input.height);
  const int out_w = s.out_extent(input.width);
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  const int kdim = s.total_in_channels() * s.kernel * s.kernel;

  ConvCache local;
  ConvCache& c = cache ? *cache : local;
  im2col(s, input, out_h, out_w, c.columns);
  c.in_height = input.height;
  c.in_width = input.width;
  c.out_height = out_h;
  c.out_width = out_w;

  FeatureMap out(s.out_channels, out_h, out_w);
  ConstRowMap w(weight.data(), s.out_channels, kdim);
  ConstRowMap cols(c.columns.data(), kdim, static_cast<Eigen::Index>(out_plane));
  RowMap y(out.data.data(), s.out_channels, static_cast<Eigen::Index>(out_plane));
  y.noalias() = w * cols;
  for (int o = 0; o < s.out_channels; ++o) y.row(o).array() += bias[o];
  return out;
}

FeatureMap conv2d_backward(const ConvShape& s, std::span<const double> weight,
                           const ConvCache& cache, const FeatureMap& grad_output,
                           std::span<double> grad_weight, std::span<double> grad_bias) {
  const std::size_t out_plane = static_cast<std::size_t>(cache.out_height) * cache.out_width;
  const int kdim = s.total_in_channels() * s.kernel * s.kernel;
  if (grad_output.size() != out_plane * s.out_channels) {
    throw Error(ErrorKind::ShapeMismatch, "conv gradient shape mismatch");
  }
  ConstRowMap dy(grad_output.data.data(), s.out_channels, static_cast<Eigen::Index>(out_plane));
  ConstRowMap cols(cache.columns.data(), kdim, static_cast<Eigen::Index>(out_plane));
  ConstRowMap w(weight.data(), s.out_channels, kdim);

  RowMap dw(grad_weight.data(), s.out_channels, kdim);
  dw.noalias() += dy * cols.transpose();
  for (int o = 0; o < s.out_channels; ++o) grad_bias[o] += dy.row(o).sum();

  std::vector<double> dcols(static_cast<std::size_t>(kdim) * out_plane);
  RowMap dc(dcols.data(), kdim, static_cast<Eigen::Index>(out_plane));
  dc.noalias() = w.transpose() * dy;

  FeatureMap grad_in(s.in_channels, cache.in_height, cache.in_width);
  col2im(s, dcols, cache.out_height, cache.out_width, grad_in);
  return grad_in;
}

void silu_inplace(std::span<double> values) {
  for (double& v : values) v = v * sigmoid(v);
}

void silu_backward_inplace(std::span<const double> pre, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double s = sigmoid(pre[i]);
    grad[i] *= s * (1.0 + pre[i] * (1.0 - s));
  }
}

FeatureMap upsample2x(const FeatureMap& in) {
  FeatureMap out(in.channels, in.height * 2, in.width * 2);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
  return out;
}

FeatureMap upsample2x_backward(const FeatureMap& g) {
  FeatureMap out(g.channels, g.height / 2, g.width / 2);
  for (int c = 0; c < g.channels; ++c)
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) out.at(c, y / 2, x / 2) += g.at(c, y, x);
  return out;
}

void add_inplace(FeatureMap& target, const FeatureMap& other) {
  if (target.size() != other.size()) {
    throw Error(ErrorKind::ShapeMismatch, "feature map sizes differ in add");
  }
  for (std::size_t i = 0; i < target.size(); ++i) target.data[i] += other.data[i];
}

}  // namespace yolortho::nn
