#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mism {

/// Interleaved RGB, row-major, 8 bits per channel.
struct RgbImage8 {
  int width = 0, height = 0;
  std::vector<uint8_t> data;  // size 3*width*height
};

/// Single-channel 16-bit (KITTI-style depth: meters = raw/256, 0 = invalid).
struct GrayImage16 {
  int width = 0, height = 0;
  std::vector<uint16_t> data;
};

RgbImage8 read_png_rgb8(const std::string& path);
void write_png_rgb8(const std::string& path, const RgbImage8& img);
GrayImage16 read_png_gray16(const std::string& path);
void write_png_gray16(const std::string& path, const GrayImage16& img);

}  // namespace mism
