// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace milr {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb &, const Rgb &) = default;
};

/// Row-major 8-bit RGB raster.
class RgbImage {
public:
  RgbImage() = default;
  RgbImage(int width, int height, Rgb fill = {255, 255, 255});
  RgbImage(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  Rgb at(int x, int y) const {
    const std::uint8_t *p = &data_[index(x, y)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    std::uint8_t *p = &data_[index(x, y)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }
  std::span<std::uint8_t> bytes() noexcept { return data_; }

  /// Copy of the rectangle at (x0, y0); pixels outside the source are
  /// filled with `pad`.
  RgbImage crop(int x0, int y0, int w, int h, Rgb pad = {255, 255, 255}) const;

  friend bool operator==(const RgbImage &, const RgbImage &) = default;

private:
  std::size_t index(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
           3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// 8-bit single channel raster (masks are stored as 0/255).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
};

RgbImage read_png_rgb(const std::filesystem::path &path);
void write_png_rgb(const std::filesystem::path &path, const RgbImage &image);
std::vector<std::uint8_t> encode_png_rgb(const RgbImage &image);

GrayImage read_png_gray(const std::filesystem::path &path);
void write_png_gray(const std::filesystem::path &path, const GrayImage &image);

/// The eight symmetries of the square, in the fixed order used by tile
/// augmentation.
enum class Dihedral : std::uint8_t {
  Identity = 0,
  Rot90 = 1,  // clockwise
  Rot180 = 2,
  Rot270 = 3,
  FlipH = 4,  // mirror left-right
  FlipV = 5,  // mirror top-bottom
  Transpose = 6,
  AntiTranspose = 7,
};

inline constexpr std::array<Dihedral, 8> kDihedralOrder = {
    Dihedral::Identity, Dihedral::Rot90, Dihedral::Rot180,
    Dihedral::Rot270,   Dihedral::FlipH, Dihedral::FlipV,
    Dihedral::Transpose, Dihedral::AntiTranspose};

const char *dihedral_name(Dihedral t);

/// Source coordinate that lands at destination (x, y) for an n×n square.
std::array<int, 2> dihedral_source(Dihedral t, int x, int y, int n);

/// Apply a dihedral transform to a square image.
RgbImage apply_dihedral(const RgbImage &square, Dihedral t);

} // namespace milr
