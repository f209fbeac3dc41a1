#include "msnet/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace msnet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor<float> read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, Errc::missing_frame, "cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, Errc::io_error, "png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(Errc::io_error, "png info allocation failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Errc::io_error, "corrupt png: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  // Normalize everything to 8-bit gray or RGB.
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  png_size_t rowbytes = png_get_rowbytes(png, info);
  int channels = static_cast<int>(png_get_channels(png, info));
  require(channels == 1 || channels == 3, Errc::io_error, "unsupported png channel count: " + path);

  pixels.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<float> out({channels, static_cast<int>(h), static_cast<int>(w)});
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        out[(static_cast<std::int64_t>(c) * h + y) * w + x] =
            static_cast<float>(pixels[y * rowbytes + x * static_cast<png_uint_32>(channels) +
                                      static_cast<png_uint_32>(c)]) /
            255.0f;
  return out;
}

void write_png(const std::string& path, const Tensor<float>& image) {
  require(image.rank() == 3 && (image.shape(0) == 1 || image.shape(0) == 3), Errc::invalid_argument,
          "write_png expects [C,H,W] with C of 1 or 3, got " + shape_string(image));
  int c = image.shape(0), h = image.shape(1), w = image.shape(2);

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, Errc::io_error, "cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, Errc::io_error, "png writer allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(Errc::io_error, "png info allocation failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::io_error, "png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  pixels.resize(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        float v = image[(static_cast<std::int64_t>(ch) * h + y) * w + x];
        v = std::min(1.0f, std::max(0.0f, v));
        pixels[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
  rows.resize(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * w * c;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace msnet
