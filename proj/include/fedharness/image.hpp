#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedharness/common.hpp"

namespace fedharness {

// 8-bit grayscale raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t size() const { return pixels.size(); }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Containers understood by the harness. Grayscale raster payload in all
// four; they differ only in header magic and byte encoding, standing in for
// the format zoo of real archives.
//
//   Pgm  "P5\n<w> <h>\n255\n" + raw rows            ext .pgm  (canonical)
//   Sgb  "SGB1" + w,h (u32 LE) + raw rows bottom-up ext .bmp
//   Sgt  "SGT1" + w,h (u32 LE) + RLE (count,value)  ext .tif
//   Sgj  "SGJ1" + w,h (u32 LE) + first byte raw,
//         then u8 wrap-around deltas                ext .jpg
enum class ImageFormat { Pgm, Sgb, Sgt, Sgj };

constexpr const char* kImageExtensions[] = {".pgm", ".bmp", ".tif", ".jpg"};

std::string format_name(ImageFormat f);
std::string format_extension(ImageFormat f);
std::optional<ImageFormat> format_from_name(const std::string& name);
std::optional<ImageFormat> format_for_extension(const std::string& ext);
bool is_image_extension(const std::string& ext);

std::vector<std::uint8_t> encode_image(const Image& img, ImageFormat f);
// Sniffs the container from magic bytes; nullopt when not one of ours.
std::optional<ImageFormat> sniff_format(std::span<const std::uint8_t> bytes);
std::optional<Image> decode_image(std::span<const std::uint8_t> bytes);
std::optional<Image> decode_image_file(const fs::path& path);
void write_image_file(const fs::path& path, const Image& img, ImageFormat f);

// True when the byte string contains any of the container magics. Used by
// the privacy guard and the trace scanner.
bool contains_image_magic(std::string_view bytes);

std::pair<double, double> image_mean_std(const Image& img);

// factor-of-n box average; width/height must divide evenly.
Image box_downscale(const Image& img, int factor);
// factor-of-n pixel replication.
Image upscale_replicate(const Image& img, int factor);
// Resize between sizes related by an integer factor either way.
Image resize_to(const Image& img, int width, int height);

// Linear remap of the intensity distribution onto (mean, std), clamped to
// [0,255]. Degenerate source std falls back to a pure shift.
Image remap_intensity(const Image& img, double target_mean, double target_std);

}  // namespace fedharness
