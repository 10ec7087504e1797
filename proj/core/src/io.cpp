#include "sit/io.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "sit/errors.hpp"

namespace sit {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image from_rows(const std::vector<std::vector<unsigned char>>& rows, int h, int w, int channels,
                int stride) {
  const int c = channels >= 3 ? 3 : 1;
  Image img(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        unsigned char v = rows[y][std::size_t(x) * stride + ch];
        img.at(y, x, ch) = double(v) / 255.0 * 2.0 - 1.0;
      }
  return img;
}

Image read_png_file(std::FILE* f, const std::filesystem::path& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw RuntimeFailure("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw RuntimeFailure("png: allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeFailure("png: failed to decode " + path.string());
  }
  png_init_io(png, f);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<std::vector<unsigned char>> rows(h, std::vector<unsigned char>(rowbytes));
  std::vector<png_bytep> row_ptrs(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = rows[y].data();
  png_read_image(png, row_ptrs.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return from_rows(rows, int(h), int(w), channels, channels);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jmp;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jmp, 1);
}

Image read_jpeg_file(std::FILE* f, const std::filesystem::path& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jmp)) {
    jpeg_destroy_decompress(&cinfo);
    throw RuntimeFailure("jpeg: failed to decode " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  jpeg_start_decompress(&cinfo);

  int w = int(cinfo.output_width), h = int(cinfo.output_height);
  int channels = cinfo.output_components;
  std::vector<std::vector<unsigned char>> rows(h, std::vector<unsigned char>(std::size_t(w) * channels));
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* ptr = rows[cinfo.output_scanline].data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rows(rows, h, w, channels, channels);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw RuntimeFailure("cannot open image: " + path.string());
  unsigned char magic[4] = {0, 0, 0, 0};
  if (std::fread(magic, 1, 4, f.get()) != 4) throw RuntimeFailure("unreadable image: " + path.string());
  std::rewind(f.get());
  if (magic[0] == 0x89 && magic[1] == 'P') return read_png_file(f.get(), path);
  if (magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg_file(f.get(), path);
  throw RuntimeFailure("unsupported image format (want PNG or JPEG): " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw InvalidArgument("write_png: need 1 or 3 channels");
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw RuntimeFailure("cannot write image: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw RuntimeFailure("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw RuntimeFailure("png: allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("png: failed to encode " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(std::size_t(img.w) * img.c);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        double v = (std::clamp(img.at(y, x, ch), -1.0, 1.0) + 1.0) * 0.5 * 255.0;
        row[std::size_t(x) * img.c + ch] = (unsigned char)std::lround(v);
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace sit
