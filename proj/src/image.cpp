#include "ledpose/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "ledpose/rng.hpp"

namespace ledpose {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

unsigned char to_byte(float v) {
  float s = std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f;
  return static_cast<unsigned char>(s);
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error("write_png: empty image");
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    const float* src = img.px(0, y);
    for (int i = 0; i < img.width * 3; ++i) row[static_cast<std::size_t>(i)] = to_byte(src[i]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng error reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  Image img(static_cast<int>(w), static_cast<int>(h));
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    float* dst = img.px(0, static_cast<int>(y));
    for (std::size_t i = 0; i < row.size(); ++i)
      dst[i] = static_cast<float>(row[i]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_gray(const std::string& path, const std::vector<double>& map, int w, int h) {
  if (w <= 0 || h <= 0 || map.size() != static_cast<std::size_t>(w) * h)
    throw std::runtime_error("write_png_gray: bad dimensions");
  double lo = map[0], hi = map[0];
  for (double v : map) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double span = hi - lo;
  if (span <= 0.0) span = 1.0;
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float g = static_cast<float>((map[static_cast<std::size_t>(y) * w + x] - lo) / span);
      float* p = img.px(x, y);
      p[0] = p[1] = p[2] = g;
    }
  write_png(path, img);
}

Image avg_pool2(const Image& img) {
  Image out(img.width / 2, img.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const float* a = img.px(2 * x, 2 * y);
      const float* b = img.px(2 * x + 1, 2 * y);
      const float* c = img.px(2 * x, 2 * y + 1);
      const float* d = img.px(2 * x + 1, 2 * y + 1);
      float* o = out.px(x, y);
      for (int ch = 0; ch < 3; ++ch) o[ch] = 0.25f * (a[ch] + b[ch] + c[ch] + d[ch]);
    }
  return out;
}

std::vector<float> smooth_noise_field(int w, int h, int cell_size, int octaves, Rng& rng) {
  std::vector<float> field(static_cast<std::size_t>(w) * h, 0.0f);
  float total_amp = 0.0f;
  float amp = 1.0f;
  int cell = std::max(2, cell_size);
  for (int o = 0; o < octaves; ++o) {
    int gw = w / cell + 2, gh = h / cell + 2;
    std::vector<float> lattice(static_cast<std::size_t>(gw) * gh);
    for (float& v : lattice) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (int y = 0; y < h; ++y) {
      float fy = static_cast<float>(y) / cell;
      int y0 = static_cast<int>(fy);
      float wy = fy - y0;
      for (int x = 0; x < w; ++x) {
        float fx = static_cast<float>(x) / cell;
        int x0 = static_cast<int>(fx);
        float wx = fx - x0;
        const float* row0 = lattice.data() + static_cast<std::size_t>(y0) * gw;
        const float* row1 = row0 + gw;
        float v = (1 - wy) * ((1 - wx) * row0[x0] + wx * row0[x0 + 1]) +
                  wy * ((1 - wx) * row1[x0] + wx * row1[x0 + 1]);
        field[static_cast<std::size_t>(y) * w + x] += amp * v;
      }
    }
    total_amp += amp;
    amp *= 0.5f;
    cell = std::max(2, cell / 2);
  }
  for (float& v : field) v /= total_amp;
  return field;
}

std::vector<Image> build_pyramid(const Image& img, const std::vector<double>& scales) {
  if (scales.empty() || scales[0] != 1.0)
    throw std::invalid_argument("build_pyramid: first scale must be 1");
  std::vector<Image> pyr;
  pyr.push_back(img);
  double cur = 1.0;
  for (std::size_t i = 1; i < scales.size(); ++i) {
    if (!(scales[i] < scales[i - 1]))
      throw std::invalid_argument("build_pyramid: scales must be strictly decreasing");
    while (cur / 2.0 >= scales[i] - 1e-12) {
      pyr.push_back(avg_pool2(pyr.back()));
      cur /= 2.0;
    }
    if (std::abs(cur - scales[i]) > 1e-12)
      throw std::invalid_argument("build_pyramid: scales must be powers of 1/2");
    while (pyr.size() > i + 1) pyr.erase(pyr.begin() + 1);
  }
  return pyr;
}

}  // namespace ledpose
