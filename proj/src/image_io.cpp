#include "mism/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace mism {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void io_fail(const std::string& what, const std::string& path) {
  throw std::runtime_error("mism: " + what + ": " + path);
}

}  // namespace

RgbImage8 read_png_rgb8(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) io_fail("cannot open", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) io_fail("png alloc failed", path);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail("png decode failed", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  RgbImage8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3 || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail("unsupported color format", path);
  }
  img.data.resize(static_cast<size_t>(3 * img.width * img.height));
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] = img.data.data() + static_cast<size_t>(3 * img.width * y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_rgb8(const std::string& path, const RgbImage8& img) {
  if (img.data.size() != static_cast<size_t>(3 * img.width * img.height))
    io_fail("rgb buffer size mismatch", path);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) io_fail("cannot open for write", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) io_fail("png alloc failed", path);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_fail("png encode failed", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.data.data() + static_cast<size_t>(3 * img.width * y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage16 read_png_gray16(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) io_fail("cannot open", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) io_fail("png alloc failed", path);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail("png decode failed", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail("expected grayscale png", path);
  }
  png_set_expand_16(png);
#if defined(PNG_READ_SWAP_SUPPORTED)
  png_set_swap(png);  // PNG stores 16-bit big-endian
#endif
  png_read_update_info(png, info);

  GrayImage16 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.data.resize(static_cast<size_t>(img.width * img.height));
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] =
        reinterpret_cast<png_bytep>(img.data.data() + static_cast<size_t>(img.width * y));
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_gray16(const std::string& path, const GrayImage16& img) {
  if (img.data.size() != static_cast<size_t>(img.width * img.height))
    io_fail("gray buffer size mismatch", path);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) io_fail("cannot open for write", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) io_fail("png alloc failed", path);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_fail("png encode failed", path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
#if defined(PNG_WRITE_SWAP_SUPPORTED)
  png_set_swap(png);
#endif
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, reinterpret_cast<png_bytep>(const_cast<uint16_t*>(
                           img.data.data() + static_cast<size_t>(img.width * y))));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace mism
