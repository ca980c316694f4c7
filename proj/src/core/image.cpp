// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "error.hpp"

namespace milr {

RgbImage::RgbImage(int width, int height, Rgb fill)
    : width_(width), height_(height) {
  MILR_REQUIRE(width >= 1 && height >= 1, ErrorCode::InvalidArgument,
               "image dimensions must be positive");
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), data_(std::move(pixels)) {
  MILR_REQUIRE(width >= 1 && height >= 1, ErrorCode::InvalidArgument,
               "image dimensions must be positive");
  MILR_REQUIRE(data_.size() == static_cast<std::size_t>(width) * height * 3,
               ErrorCode::InvalidArgument,
               "pixel buffer length must equal width*height*3");
}

RgbImage RgbImage::crop(int x0, int y0, int w, int h, Rgb pad) const {
  RgbImage out(w, h, pad);
  const int xs = std::max(0, x0), ys = std::max(0, y0);
  const int xe = std::min(width_, x0 + w), ye = std::min(height_, y0 + h);
  for (int y = ys; y < ye; ++y) {
    if (xe <= xs)
      break;
    std::memcpy(&out.data_[out.index(xs - x0, y - y0)], &data_[index(xs, y)],
                static_cast<std::size_t>(xe - xs) * 3);
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE *f) const noexcept {
    if (f)
      std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path &path, const char *mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f)
    fail(ErrorCode::Io, "cannot open " + path.string());
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto *err = static_cast<std::string *>(png_get_error_ptr(png));
  if (err)
    *err = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

struct PngReadResult {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;
};

// Decodes to 8-bit RGB or gray, stripping alpha and expanding palettes.
PngReadResult read_png(const std::filesystem::path &path, bool want_rgb) {
  FilePtr f = open_file(path, "rb");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                           png_error_fn, png_warning_fn);
  if (!png)
    fail(ErrorCode::Io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  PngReadResult out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Io, "cannot decode PNG " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16)
    png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE)
    png_set_palette_to_rgb(png);
  if ((color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) &&
      depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA)
    png_set_strip_alpha(png);
  const bool is_gray =
      color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (want_rgb && is_gray)
    png_set_gray_to_rgb(png);
  if (!want_rgb && !is_gray)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.data.resize(stride * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y)
    rows[y] = out.data.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(std::FILE *f, int width, int height, int color_type,
               const std::uint8_t *data, std::size_t stride,
               std::vector<std::uint8_t> *sink) {
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                            png_error_fn, png_warning_fn);
  if (!png)
    fail(ErrorCode::Io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, "PNG encode failed: " + err);
  }
  if (sink) {
    png_set_write_fn(
        png, sink,
        [](png_structp p, png_bytep buf, png_size_t len) {
          auto *v = static_cast<std::vector<std::uint8_t> *>(png_get_io_ptr(p));
          v->insert(v->end(), buf, buf + len);
        },
        [](png_structp) {});
  } else {
    png_init_io(png, f);
  }
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(data + stride * y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

} // namespace

RgbImage read_png_rgb(const std::filesystem::path &path) {
  PngReadResult r = read_png(path, true);
  return RgbImage(r.width, r.height, std::move(r.data));
}

void write_png_rgb(const std::filesystem::path &path, const RgbImage &image) {
  FilePtr f = open_file(path, "wb");
  write_png(f.get(), image.width(), image.height(), PNG_COLOR_TYPE_RGB,
            image.bytes().data(), static_cast<std::size_t>(image.width()) * 3,
            nullptr);
}

std::vector<std::uint8_t> encode_png_rgb(const RgbImage &image) {
  std::vector<std::uint8_t> out;
  write_png(nullptr, image.width(), image.height(), PNG_COLOR_TYPE_RGB,
            image.bytes().data(), static_cast<std::size_t>(image.width()) * 3,
            &out);
  return out;
}

GrayImage read_png_gray(const std::filesystem::path &path) {
  PngReadResult r = read_png(path, false);
  return GrayImage{r.width, r.height, std::move(r.data)};
}

void write_png_gray(const std::filesystem::path &path, const GrayImage &image) {
  MILR_REQUIRE(image.data.size() ==
                   static_cast<std::size_t>(image.width) * image.height,
               ErrorCode::InvalidArgument, "gray buffer size mismatch");
  FilePtr f = open_file(path, "wb");
  write_png(f.get(), image.width, image.height, PNG_COLOR_TYPE_GRAY,
            image.data.data(), static_cast<std::size_t>(image.width), nullptr);
}

const char *dihedral_name(Dihedral t) {
  switch (t) {
  case Dihedral::Identity: return "identity";
  case Dihedral::Rot90: return "rot90";
  case Dihedral::Rot180: return "rot180";
  case Dihedral::Rot270: return "rot270";
  case Dihedral::FlipH: return "flip_h";
  case Dihedral::FlipV: return "flip_v";
  case Dihedral::Transpose: return "transpose";
  case Dihedral::AntiTranspose: return "anti_transpose";
  }
  return "?";
}

std::array<int, 2> dihedral_source(Dihedral t, int x, int y, int n) {
  const int m = n - 1;
  switch (t) {
  case Dihedral::Identity: return {x, y};
  case Dihedral::Rot90: return {y, m - x};
  case Dihedral::Rot180: return {m - x, m - y};
  case Dihedral::Rot270: return {m - y, x};
  case Dihedral::FlipH: return {m - x, y};
  case Dihedral::FlipV: return {x, m - y};
  case Dihedral::Transpose: return {y, x};
  case Dihedral::AntiTranspose: return {m - y, m - x};
  }
  return {x, y};
}

RgbImage apply_dihedral(const RgbImage &square, Dihedral t) {
  MILR_REQUIRE(square.width() == square.height(), ErrorCode::InvalidArgument,
               "dihedral transforms need a square image");
  const int n = square.width();
  RgbImage out(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto [sx, sy] = dihedral_source(t, x, y, n);
      out.set(x, y, square.at(sx, sy));
    }
  return out;
}

} // namespace milr
