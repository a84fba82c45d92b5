#include "doctest.h"

#include <cmath>

#include "fedharness/image.hpp"
#include "fedharness/rng.hpp"

using namespace fedharness;

namespace {

Image random_image(int w, int h, std::uint64_t seed) {
  RngStream r(seed);
  Image img{w, h, {}};
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  for (auto& px : img.pixels) px = static_cast<std::uint8_t>(r.below(256));
  return img;
}

Image constant_image(int w, int h, std::uint8_t v) {
  Image img{w, h, {}};
  img.pixels.assign(static_cast<std::size_t>(w) * h, v);
  return img;
}

}  // namespace

TEST_CASE("all containers roundtrip pixel-exact") {
  auto noisy = random_image(17, 9, 11);
  auto flat = constant_image(16, 16, 200);
  for (auto fmt : {ImageFormat::Pgm, ImageFormat::Sgb, ImageFormat::Sgt, ImageFormat::Sgj}) {
    std::string fname = format_name(fmt);
    CAPTURE(fname);
    for (const auto& src : {noisy, flat}) {
      auto bytes = encode_image(src, fmt);
      CHECK(sniff_format(bytes) == fmt);
      auto back = decode_image(bytes);
      REQUIRE(back.has_value());
      CHECK(back->width == src.width);
      CHECK(back->height == src.height);
      CHECK(back->pixels == src.pixels);
    }
  }
}

TEST_CASE("extension and name mappings agree") {
  for (auto fmt : {ImageFormat::Pgm, ImageFormat::Sgb, ImageFormat::Sgt, ImageFormat::Sgj}) {
    CHECK(format_from_name(format_name(fmt)) == fmt);
    CHECK(format_for_extension(format_extension(fmt)) == fmt);
    CHECK(is_image_extension(format_extension(fmt)));
  }
  CHECK_FALSE(is_image_extension(".txt"));
  CHECK_FALSE(format_from_name("png").has_value());
}

TEST_CASE("decoder rejects damaged payloads") {
  auto img = random_image(8, 8, 3);
  for (auto fmt : {ImageFormat::Pgm, ImageFormat::Sgb, ImageFormat::Sgt, ImageFormat::Sgj}) {
    auto bytes = encode_image(img, fmt);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_FALSE(decode_image(truncated).has_value());
    auto padded = bytes;
    padded.push_back(0x17);
    CHECK_FALSE(decode_image(padded).has_value());
  }
  std::vector<std::uint8_t> garbage{'n', 'o', 't', ' ', 'i', 'm', 'g'};
  CHECK_FALSE(sniff_format(garbage).has_value());
  CHECK_FALSE(decode_image(garbage).has_value());
}

TEST_CASE("rle rejects zero-length runs and overflow") {
  // Header: SGT1, 2x1. Body claims a zero run.
  std::vector<std::uint8_t> zero_run{'S', 'G', 'T', '1', 2, 0, 0, 0, 1, 0, 0, 0, 0, 9};
  CHECK_FALSE(decode_image(zero_run).has_value());
  // Run of 200 overflows a 2-pixel image.
  std::vector<std::uint8_t> overflow{'S', 'G', 'T', '1', 2, 0, 0, 0, 1, 0, 0, 0, 200, 9};
  CHECK_FALSE(decode_image(overflow).has_value());
}

TEST_CASE("magic detection finds containers mid-stream") {
  CHECK(contains_image_magic("prefix SGB1 suffix"));
  CHECK(contains_image_magic(std::string("x") + "P5\n1 1\n255\n"));
  CHECK(contains_image_magic("SGT1"));
  CHECK(contains_image_magic("SGJ1"));
  CHECK_FALSE(contains_image_magic("plain json {\"a\": 1}"));
  CHECK_FALSE(contains_image_magic("P5 without newline here"));
}

TEST_CASE("mean and std") {
  auto flat = constant_image(4, 4, 100);
  auto [m1, s1] = image_mean_std(flat);
  CHECK(m1 == doctest::Approx(100.0));
  CHECK(s1 == doctest::Approx(0.0));

  Image two{2, 1, {0, 200}};
  auto [m2, s2] = image_mean_std(two);
  CHECK(m2 == doctest::Approx(100.0));
  CHECK(s2 == doctest::Approx(100.0));
}

TEST_CASE("box_downscale averages with rounding") {
  Image img{4, 2, {10, 20, 30, 40, 10, 20, 30, 40}};
  auto out = box_downscale(img, 2);
  REQUIRE(out.width == 2);
  REQUIRE(out.height == 1);
  CHECK(out.pixels[0] == 15);
  CHECK(out.pixels[1] == 35);
  CHECK_THROWS_AS(box_downscale(Image{3, 3, std::vector<std::uint8_t>(9, 0)}, 2), HarnessError);
}

TEST_CASE("upscale then downscale restores the original") {
  auto img = random_image(8, 8, 5);
  auto up = upscale_replicate(img, 3);
  CHECK(up.width == 24);
  auto back = box_downscale(up, 3);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("resize_to handles integer factors only") {
  auto img = random_image(16, 16, 6);
  auto up = resize_to(img, 64, 64);
  CHECK(up.width == 64);
  auto same = resize_to(img, 16, 16);
  CHECK(same.pixels == img.pixels);
  auto down = resize_to(img, 8, 8);
  CHECK(down.width == 8);
  CHECK_THROWS_AS(resize_to(img, 24, 24), HarnessError);
}

TEST_CASE("remap_intensity hits the target statistics") {
  RngStream r(12);
  Image img{64, 64, {}};
  img.pixels.resize(64 * 64);
  for (auto& px : img.pixels)
    px = static_cast<std::uint8_t>(std::clamp(std::lround(90.0 + 20.0 * r.gaussian()), 0l, 255l));
  auto out = remap_intensity(img, 150.0, 8.0);
  auto [m, s] = image_mean_std(out);
  CHECK(std::abs(m - 150.0) < 1.0);
  CHECK(std::abs(s - 8.0) < 1.0);

  auto flat = remap_intensity(constant_image(4, 4, 10), 100.0, 8.0);
  auto [mf, sf] = image_mean_std(flat);
  CHECK(mf == doctest::Approx(100.0));
  CHECK(sf == doctest::Approx(0.0));
}
