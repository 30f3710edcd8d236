#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace milforge {

// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // size == width * height * 3

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = at(x, y);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  bool empty() const { return width == 0 || height == 0; }
  bool operator==(const RgbImage&) const = default;
};

// Single-channel 8-bit raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

// Throws IoError / FormatError. PNG output is deterministic (no timestamps,
// fixed compression settings).
RgbImage read_png(const std::filesystem::path& path);
void write_png(const RgbImage& image, const std::filesystem::path& path);
void write_png(const GrayImage& image, const std::filesystem::path& path);

// Every page of a (pyramidal) TIFF, in file order. Returns an empty vector
// when TIFF support was not compiled in.
std::vector<RgbImage> read_tiff_pages(const std::filesystem::path& path);
bool tiff_supported();

// Box-filter reduction by an integer factor; edge blocks average the pixels
// that exist.
RgbImage box_downsample(const RgbImage& src, int factor);

// HSV saturation scaled to 0..255, matching the 8-bit HSV convention.
GrayImage saturation_channel(const RgbImage& src);

}  // namespace milforge
