#pragma once

#include <string>
#include <vector>

namespace ledpose {

/// RGB image, row-major, channel-interleaved, intensities in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // height * width * 3

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  float* px(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const float* px(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

/// 8-bit RGB PNG I/O. Throws std::runtime_error on I/O or decode failure.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

/// Grayscale 8-bit PNG from a row-major double map, min-max normalized.
void write_png_gray(const std::string& path, const std::vector<double>& map, int w, int h);

/// 2x2 average pooling; odd trailing row/column dropped.
Image avg_pool2(const Image& img);

/// Image pyramid for the given downscale factors. Factors must be 1 or
/// produced by repeated halving (1, 1/2, 1/4, ...), strictly decreasing,
/// first factor 1.
std::vector<Image> build_pyramid(const Image& img, const std::vector<double>& scales);

class Rng;

/// Smooth multi-octave gradient noise in roughly [-1, 1]: random lattice
/// values bilinearly interpolated, halving cell size per octave.
std::vector<float> smooth_noise_field(int w, int h, int cell_size, int octaves, Rng& rng);

}  // namespace ledpose
