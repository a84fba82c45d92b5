#include "fedharness/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace fedharness {

namespace {

constexpr char kMagicSgb[] = "SGB1";
constexpr char kMagicSgt[] = "SGT1";
constexpr char kMagicSgj[] = "SGJ1";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::optional<std::uint32_t> get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 4 > b.size()) return std::nullopt;
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

bool starts_with(std::span<const std::uint8_t> b, const char* magic) {
  std::size_t n = std::strlen(magic);
  if (b.size() < n) return false;
  return std::memcmp(b.data(), magic, n) == 0;
}

constexpr std::uint32_t kMaxDim = 1 << 14;

bool plausible_dims(std::uint32_t w, std::uint32_t h) {
  return w > 0 && h > 0 && w <= kMaxDim && h <= kMaxDim;
}

std::optional<Image> decode_pgm(std::span<const std::uint8_t> b) {
  // "P5\n<w> <h>\n255\n" followed by raw rows.
  std::size_t i = 2;
  auto skip_ws = [&] {
    while (i < b.size() && (b[i] == ' ' || b[i] == '\n' || b[i] == '\t' || b[i] == '\r')) ++i;
  };
  auto read_int = [&]() -> std::optional<std::uint32_t> {
    skip_ws();
    if (i >= b.size() || b[i] < '0' || b[i] > '9') return std::nullopt;
    std::uint64_t v = 0;
    while (i < b.size() && b[i] >= '0' && b[i] <= '9') {
      v = v * 10 + (b[i] - '0');
      if (v > kMaxDim * kMaxDim) return std::nullopt;
      ++i;
    }
    return static_cast<std::uint32_t>(v);
  };
  auto w = read_int();
  auto h = read_int();
  auto maxval = read_int();
  if (!w || !h || !maxval || *maxval != 255 || !plausible_dims(*w, *h)) return std::nullopt;
  if (i >= b.size() || b[i] != '\n') return std::nullopt;
  ++i;
  std::size_t need = static_cast<std::size_t>(*w) * *h;
  if (b.size() - i != need) return std::nullopt;
  Image img{static_cast<int>(*w), static_cast<int>(*h), {}};
  img.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(i), b.end());
  return img;
}

}  // namespace

std::string format_name(ImageFormat f) {
  switch (f) {
    case ImageFormat::Pgm: return "pgm";
    case ImageFormat::Sgb: return "sgb";
    case ImageFormat::Sgt: return "sgt";
    case ImageFormat::Sgj: return "sgj";
  }
  return "pgm";
}

std::string format_extension(ImageFormat f) {
  switch (f) {
    case ImageFormat::Pgm: return ".pgm";
    case ImageFormat::Sgb: return ".bmp";
    case ImageFormat::Sgt: return ".tif";
    case ImageFormat::Sgj: return ".jpg";
  }
  return ".pgm";
}

std::optional<ImageFormat> format_from_name(const std::string& name) {
  if (name == "pgm") return ImageFormat::Pgm;
  if (name == "sgb") return ImageFormat::Sgb;
  if (name == "sgt") return ImageFormat::Sgt;
  if (name == "sgj") return ImageFormat::Sgj;
  return std::nullopt;
}

std::optional<ImageFormat> format_for_extension(const std::string& ext) {
  if (ext == ".pgm") return ImageFormat::Pgm;
  if (ext == ".bmp") return ImageFormat::Sgb;
  if (ext == ".tif") return ImageFormat::Sgt;
  if (ext == ".jpg") return ImageFormat::Sgj;
  return std::nullopt;
}

bool is_image_extension(const std::string& ext) {
  return format_for_extension(ext).has_value();
}

std::vector<std::uint8_t> encode_image(const Image& img, ImageFormat f) {
  std::vector<std::uint8_t> out;
  switch (f) {
    case ImageFormat::Pgm: {
      std::string header = "P5\n" + std::to_string(img.width) + " " +
                           std::to_string(img.height) + "\n255\n";
      out.assign(header.begin(), header.end());
      out.insert(out.end(), img.pixels.begin(), img.pixels.end());
      break;
    }
    case ImageFormat::Sgb: {
      out.assign(kMagicSgb, kMagicSgb + 4);
      put_u32(out, static_cast<std::uint32_t>(img.width));
      put_u32(out, static_cast<std::uint32_t>(img.height));
      for (int y = img.height - 1; y >= 0; --y) {
        const auto* row = img.pixels.data() + static_cast<std::size_t>(y) * img.width;
        out.insert(out.end(), row, row + img.width);
      }
      break;
    }
    case ImageFormat::Sgt: {
      out.assign(kMagicSgt, kMagicSgt + 4);
      put_u32(out, static_cast<std::uint32_t>(img.width));
      put_u32(out, static_cast<std::uint32_t>(img.height));
      std::size_t i = 0;
      while (i < img.pixels.size()) {
        std::uint8_t v = img.pixels[i];
        std::size_t run = 1;
        while (run < 255 && i + run < img.pixels.size() && img.pixels[i + run] == v) ++run;
        out.push_back(static_cast<std::uint8_t>(run));
        out.push_back(v);
        i += run;
      }
      break;
    }
    case ImageFormat::Sgj: {
      out.assign(kMagicSgj, kMagicSgj + 4);
      put_u32(out, static_cast<std::uint32_t>(img.width));
      put_u32(out, static_cast<std::uint32_t>(img.height));
      std::uint8_t prev = 0;
      for (std::uint8_t px : img.pixels) {
        out.push_back(static_cast<std::uint8_t>(px - prev));
        prev = px;
      }
      break;
    }
  }
  return out;
}

std::optional<ImageFormat> sniff_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 3 && bytes[0] == 'P' && bytes[1] == '5' &&
      (bytes[2] == '\n' || bytes[2] == ' '))
    return ImageFormat::Pgm;
  if (starts_with(bytes, kMagicSgb)) return ImageFormat::Sgb;
  if (starts_with(bytes, kMagicSgt)) return ImageFormat::Sgt;
  if (starts_with(bytes, kMagicSgj)) return ImageFormat::Sgj;
  return std::nullopt;
}

std::optional<Image> decode_image(std::span<const std::uint8_t> bytes) {
  auto fmt = sniff_format(bytes);
  if (!fmt) return std::nullopt;
  if (*fmt == ImageFormat::Pgm) return decode_pgm(bytes);

  auto w = get_u32(bytes, 4);
  auto h = get_u32(bytes, 8);
  if (!w || !h || !plausible_dims(*w, *h)) return std::nullopt;
  std::size_t need = static_cast<std::size_t>(*w) * *h;
  Image img{static_cast<int>(*w), static_cast<int>(*h), {}};
  std::span<const std::uint8_t> body = bytes.subspan(12);

  switch (*fmt) {
    case ImageFormat::Sgb: {
      if (body.size() != need) return std::nullopt;
      img.pixels.resize(need);
      for (std::uint32_t y = 0; y < *h; ++y) {
        const auto* row = body.data() + static_cast<std::size_t>(*h - 1 - y) * *w;
        std::copy(row, row + *w,
                  img.pixels.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(y) * *w));
      }
      break;
    }
    case ImageFormat::Sgt: {
      img.pixels.reserve(need);
      for (std::size_t i = 0; i < body.size(); i += 2) {
        if (i + 1 >= body.size()) return std::nullopt;
        std::size_t run = body[i];
        if (run == 0) return std::nullopt;
        std::uint8_t v = body[i + 1];
        if (img.pixels.size() + run > need) return std::nullopt;
        img.pixels.insert(img.pixels.end(), run, v);
      }
      if (img.pixels.size() != need) return std::nullopt;
      break;
    }
    case ImageFormat::Sgj: {
      if (body.size() != need) return std::nullopt;
      img.pixels.resize(need);
      std::uint8_t prev = 0;
      for (std::size_t i = 0; i < need; ++i) {
        prev = static_cast<std::uint8_t>(prev + body[i]);
        img.pixels[i] = prev;
      }
      break;
    }
    default:
      return std::nullopt;
  }
  return img;
}

std::optional<Image> decode_image_file(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return std::nullopt;
  auto bytes = read_file_bytes(path);
  return decode_image(bytes);
}

void write_image_file(const fs::path& path, const Image& img, ImageFormat f) {
  auto bytes = encode_image(img, f);
  write_file_bytes(path, bytes.data(), bytes.size());
}

bool contains_image_magic(std::string_view bytes) {
  if (bytes.find("P5\n") != std::string_view::npos) return true;
  if (bytes.find(kMagicSgb) != std::string_view::npos) return true;
  if (bytes.find(kMagicSgt) != std::string_view::npos) return true;
  if (bytes.find(kMagicSgj) != std::string_view::npos) return true;
  return false;
}

std::pair<double, double> image_mean_std(const Image& img) {
  if (img.pixels.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (std::uint8_t px : img.pixels) sum += px;
  double mean = sum / static_cast<double>(img.pixels.size());
  double var = 0.0;
  for (std::uint8_t px : img.pixels) {
    double d = px - mean;
    var += d * d;
  }
  var /= static_cast<double>(img.pixels.size());
  return {mean, std::sqrt(var)};
}

Image box_downscale(const Image& img, int factor) {
  if (factor <= 1) return img;
  if (img.width % factor != 0 || img.height % factor != 0)
    throw HarnessError("box_downscale: dimensions not divisible by factor");
  Image out{img.width / factor, img.height / factor, {}};
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      int acc = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) acc += img.at(x * factor + dx, y * factor + dy);
      out.at(x, y) = static_cast<std::uint8_t>((acc + factor * factor / 2) / (factor * factor));
    }
  }
  return out;
}

Image upscale_replicate(const Image& img, int factor) {
  if (factor <= 1) return img;
  Image out{img.width * factor, img.height * factor, {}};
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = img.at(x / factor, y / factor);
  return out;
}

Image resize_to(const Image& img, int width, int height) {
  if (img.width == width && img.height == height) return img;
  if (width > img.width && width % img.width == 0 && height % img.height == 0 &&
      width / img.width == height / img.height)
    return upscale_replicate(img, width / img.width);
  if (width < img.width && img.width % width == 0 && img.height % height == 0 &&
      img.width / width == img.height / height)
    return box_downscale(img, img.width / width);
  throw HarnessError("resize_to: sizes not related by an integer factor");
}

Image remap_intensity(const Image& img, double target_mean, double target_std) {
  auto [mean, std_dev] = image_mean_std(img);
  double gain = (std_dev > 1e-9 && target_std > 0.0) ? target_std / std_dev : 1.0;
  Image out = img;
  for (auto& px : out.pixels) {
    double v = (px - mean) * gain + target_mean;
    px = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
  }
  return out;
}

}  // namespace fedharness
