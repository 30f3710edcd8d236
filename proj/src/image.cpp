#include "milforge/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>

#include "milforge/error.hpp"

#ifdef MILFORGE_HAVE_OPENCV
#include <opencv2/imgcodecs.hpp>
#endif

namespace milforge {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

void write_png_rows(const std::filesystem::path& path, int width, int height, int color_type,
                    const std::uint8_t* data, std::size_t row_bytes) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: write failed for '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

RgbImage read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError("'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  RgbImage img;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: corrupt data in '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[y] = img.at(0, y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, image.pixels.data(),
                 static_cast<std::size_t>(image.width) * 3);
}

void write_png(const GrayImage& image, const std::filesystem::path& path) {
  write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, image.pixels.data(),
                 static_cast<std::size_t>(image.width));
}

bool tiff_supported() {
#ifdef MILFORGE_HAVE_OPENCV
  return true;
#else
  return false;
#endif
}

std::vector<RgbImage> read_tiff_pages(const std::filesystem::path& path) {
  std::vector<RgbImage> pages;
#ifdef MILFORGE_HAVE_OPENCV
  if (!std::filesystem::exists(path)) throw IoError("cannot open '" + path.string() + "'");
  std::vector<cv::Mat> mats;
  if (!cv::imreadmulti(path.string(), mats, cv::IMREAD_COLOR)) {
    throw FormatError("cannot decode TIFF '" + path.string() + "'");
  }
  for (const auto& m : mats) {
    RgbImage img(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y) {
      const auto* row = m.ptr<std::uint8_t>(y);
      for (int x = 0; x < m.cols; ++x) {
        img.set(x, y, row[3 * x + 2], row[3 * x + 1], row[3 * x]);  // BGR -> RGB
      }
    }
    pages.push_back(std::move(img));
  }
#else
  (void)path;
#endif
  return pages;
}

RgbImage box_downsample(const RgbImage& src, int factor) {
  if (factor < 1) throw ParameterError("box_downsample: factor must be >= 1");
  if (factor == 1) return src;
  const int w = (src.width + factor - 1) / factor;
  const int h = (src.height + factor - 1) / factor;
  RgbImage out(w, h);
  for (int oy = 0; oy < h; ++oy) {
    const int y0 = oy * factor, y1 = std::min(src.height, y0 + factor);
    for (int ox = 0; ox < w; ++ox) {
      const int x0 = ox * factor, x1 = std::min(src.width, x0 + factor);
      std::uint64_t acc[3] = {0, 0, 0};
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const auto* p = src.at(x, y);
          acc[0] += p[0];
          acc[1] += p[1];
          acc[2] += p[2];
        }
      }
      const std::uint64_t n = static_cast<std::uint64_t>(x1 - x0) * (y1 - y0);
      auto* q = out.at(ox, oy);
      for (int c = 0; c < 3; ++c) q[c] = static_cast<std::uint8_t>((acc[c] + n / 2) / n);
    }
  }
  return out;
}

GrayImage saturation_channel(const RgbImage& src) {
  GrayImage out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const auto* p = src.at(x, y);
      const int mx = std::max({p[0], p[1], p[2]});
      const int mn = std::min({p[0], p[1], p[2]});
      out.at(x, y) = mx == 0 ? 0 : static_cast<std::uint8_t>((255 * (mx - mn) + mx / 2) / mx);
    }
  }
  return out;
}

}  // namespace milforge
