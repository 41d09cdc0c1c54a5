#include "dreid/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "dreid/common.hpp"

namespace dreid {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path + "'");
  return f;
}

}  // namespace

ImageU8 read_png(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw IoError("'" + path + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decode failed for '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  ImageU8 img{static_cast<int>(h), static_cast<int>(w), channels, {}};
  img.pixels.resize(static_cast<std::size_t>(h) * w * channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const ImageU8& img, const std::string& path) {
  require(img.channels == 1 || img.channels == 3, "write_png: expected 1 or 3 channels");
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed for '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_const_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels;
  png_write_rows(png, const_cast<png_bytepp>(rows.data()), static_cast<png_uint_32>(img.height));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

}  // namespace

ImageU8 read_jpeg(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("JPEG decode failed for '" + path + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  ImageU8 img{static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width), 3, {}};
  img.pixels.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

void write_jpeg(const ImageU8& img, const std::string& path, int quality) {
  require(img.channels == 3, "write_jpeg: expected 3 channels");
  FilePtr f = open_file(path, "wb");
  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw IoError("JPEG encode failed for '" + path + "'");
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f.get());
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(
        img.pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * img.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

ImageU8 read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError("'" + path + "' is not a P5 PGM");

  auto next_token = [&]() {
    // Skip whitespace and '#' comments between header fields.
    int c;
    while ((c = in.peek()) != EOF) {
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    return v;
  };

  long w = next_token(), h = next_token(), maxval = next_token();
  if (w <= 0 || h <= 0) throw IoError("bad PGM dimensions in '" + path + "'");
  if (maxval != 255) throw IoError("'" + path + "': only maxval 255 PGMs are supported");
  in.get();  // single whitespace after maxval

  ImageU8 img{static_cast<int>(h), static_cast<int>(w), 1, {}};
  img.pixels.resize(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw IoError("truncated PGM payload in '" + path + "'");
  return img;
}

void write_pgm(const ImageU8& img, const std::string& path, const std::string& comment) {
  require(img.channels == 1, "write_pgm: expected a single channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P5\n";
  if (!comment.empty()) out << "# " << comment << "\n";
  out << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

ImageU8 read_gray(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open '" + path + "'");
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  probe.close();
  ImageU8 img;
  if (magic[0] == 'P' && magic[1] == '5') {
    img = read_pgm(path);
  } else {
    img = read_png(path);
  }
  if (img.channels != 1)
    throw IoError("'" + path + "' has " + std::to_string(img.channels) +
                  " channels; expected a single-channel label image");
  return img;
}

namespace {

void area_or_nearest_1d(const double* src, int sn, double* dst, int dn, int src_stride,
                        int dst_stride) {
  if (dn <= sn) {
    // Area average: output cell i covers [i*sn/dn, (i+1)*sn/dn) in source
    // units; fractional overlaps weighted by covered length.
    double ratio = static_cast<double>(sn) / dn;
    for (int i = 0; i < dn; ++i) {
      double lo = i * ratio, hi = (i + 1) * ratio;
      int first = static_cast<int>(lo);
      int last = static_cast<int>(std::ceil(hi)) - 1;
      if (last >= sn) last = sn - 1;
      double acc = 0.0;
      for (int s = first; s <= last; ++s) {
        double cover = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
        if (cover > 0) acc += cover * src[s * src_stride];
      }
      dst[i * dst_stride] = acc / ratio;
    }
  } else {
    for (int i = 0; i < dn; ++i) {
      int s = static_cast<int>(static_cast<long long>(i) * sn / dn);
      dst[i * dst_stride] = src[s * src_stride];
    }
  }
}

}  // namespace

void resize_plane(const double* src, int sh, int sw, double* dst, int dh, int dw) {
  require(dh >= 1 && dw >= 1, "resize_plane: target extents must be >= 1");
  // Rows first, then columns.
  std::vector<double> tmp(static_cast<std::size_t>(dh) * sw);
  for (int x = 0; x < sw; ++x)
    area_or_nearest_1d(src + x, sh, tmp.data() + x, dh, sw, sw);
  for (int y = 0; y < dh; ++y)
    area_or_nearest_1d(tmp.data() + static_cast<std::size_t>(y) * sw, sw,
                       dst + static_cast<std::size_t>(y) * dw, dw, 1, 1);
}

void resize_nearest_u8(const std::uint8_t* src, int sh, int sw, std::uint8_t* dst, int dh, int dw) {
  for (int y = 0; y < dh; ++y) {
    int sy = static_cast<int>(static_cast<long long>(y) * sh / dh);
    for (int x = 0; x < dw; ++x) {
      int sx = static_cast<int>(static_cast<long long>(x) * sw / dw);
      dst[static_cast<std::size_t>(y) * dw + x] = src[static_cast<std::size_t>(sy) * sw + sx];
    }
  }
}

}  // namespace dreid
