#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dreid {

// 8-bit image, row-major, channels interleaved (1 = gray, 3 = RGB).
struct ImageU8 {
  int height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

ImageU8 read_png(const std::string& path);
void write_png(const ImageU8& img, const std::string& path);

ImageU8 read_jpeg(const std::string& path);
void write_jpeg(const ImageU8& img, const std::string& path, int quality = 95);

// PGM P5 (binary, maxval 255). Comments after the magic are preserved on
// write and skipped on read.
ImageU8 read_pgm(const std::string& path);
void write_pgm(const ImageU8& img, const std::string& path, const std::string& comment = "");

// Reads a PNG or PGM depending on file magic.
ImageU8 read_gray(const std::string& path);

// Area-average when shrinking, nearest-neighbor when enlarging; mixed axes
// are handled per axis.
void resize_plane(const double* src, int sh, int sw, double* dst, int dh, int dw);

// Nearest-neighbor only (for label maps).
void resize_nearest_u8(const std::uint8_t* src, int sh, int sw, std::uint8_t* dst, int dh, int dw);

}  // namespace dreid
