#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "ledpose/image.hpp"
#include "ledpose/rng.hpp"

using namespace ledpose;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Image random_image(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  Rng rng = Rng::derive(seed, "test.image");
  for (float& v : img.data) v = static_cast<float>(rng.u01());
  return img;
}

}  // namespace

TEST_CASE("png round trip is exact for quantized intensities") {
  Image img(33, 17);
  Rng rng = Rng::derive(7, "quantized");
  for (float& v : img.data) v = static_cast<float>(rng.uniform_int(256)) / 255.0f;

  std::string path = temp_path("ledpose_roundtrip.png");
  write_png(path, img);
  Image back = read_png(path);
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) REQUIRE(back.data[i] == img.data[i]);
  std::remove(path.c_str());
}

TEST_CASE("png quantization error is at most half a step") {
  Image img = random_image(21, 13, 3);
  std::string path = temp_path("ledpose_quant.png");
  write_png(path, img);
  Image back = read_png(path);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 255.0f + 1e-6f);
  std::remove(path.c_str());
}

TEST_CASE("avg_pool2 averages 2x2 blocks") {
  Image img(4, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) img.px(x, y)[c] = static_cast<float>(y * 4 + x);

  Image out = avg_pool2(img);
  REQUIRE(out.width == 2);
  REQUIRE(out.height == 1);
  CHECK(out.px(0, 0)[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(out.px(1, 0)[0] == doctest::Approx((2 + 3 + 6 + 7) / 4.0));
}

TEST_CASE("avg_pool2 drops odd trailing row and column") {
  Image img(5, 3, 0.25f);
  Image out = avg_pool2(img);
  CHECK(out.width == 2);
  CHECK(out.height == 1);
  for (float v : out.data) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("pyramid sizes follow floor halving") {
  Image img = random_image(640, 360, 11);
  std::vector<Image> pyr = build_pyramid(img, {1.0, 0.5, 0.25});
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0].width == 640);
  CHECK(pyr[0].height == 360);
  CHECK(pyr[1].width == 320);
  CHECK(pyr[1].height == 180);
  CHECK(pyr[2].width == 160);
  CHECK(pyr[2].height == 90);

  Image once = avg_pool2(img);
  Image twice = avg_pool2(once);
  for (std::size_t i = 0; i < twice.data.size(); ++i)
    CHECK(pyr[2].data[i] == doctest::Approx(twice.data[i]));
}

TEST_CASE("pyramid can skip intermediate octaves") {
  Image img = random_image(64, 32, 13);
  std::vector<Image> pyr = build_pyramid(img, {1.0, 0.25});
  REQUIRE(pyr.size() == 2);
  CHECK(pyr[1].width == 16);
  CHECK(pyr[1].height == 8);
}

TEST_CASE("pyramid rejects bad scale lists") {
  Image img = random_image(16, 16, 17);
  CHECK_THROWS_AS(build_pyramid(img, {0.5, 0.25}), std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(img, {1.0, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(img, {1.0, 0.5, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(img, {1.0, 0.25, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(img, {}), std::invalid_argument);
}

TEST_CASE("smooth noise field is deterministic and non-constant") {
  Rng a = Rng::derive(5, "noise");
  Rng b = Rng::derive(5, "noise");
  std::vector<float> fa = smooth_noise_field(64, 48, 16, 3, a);
  std::vector<float> fb = smooth_noise_field(64, 48, 16, 3, b);
  REQUIRE(fa.size() == 64u * 48u);
  CHECK(fa == fb);

  float lo = fa[0], hi = fa[0];
  for (float v : fa) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(hi > lo);
  CHECK(lo >= -2.0f);
  CHECK(hi <= 2.0f);
}

TEST_CASE("gray png writes a readable file") {
  std::vector<double> map(20 * 10);
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = static_cast<double>(i);
  std::string path = temp_path("ledpose_gray.png");
  write_png_gray(path, map, 20, 10);
  Image back = read_png(path);
  CHECK(back.width == 20);
  CHECK(back.height == 10);
  CHECK(back.px(0, 0)[0] == doctest::Approx(0.0));
  CHECK(back.px(19, 9)[0] == doctest::Approx(1.0));
  std::remove(path.c_str());
}

TEST_CASE("read_png rejects missing files") {
  CHECK_THROWS_AS(read_png(temp_path("ledpose_nonexistent.png")), std::runtime_error);
}
