// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "stain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "error.hpp"

namespace milr {

StainVectors StainVectors::from_raw(const Eigen::Vector3d &h,
                                    const Eigen::Vector3d &dab) {
  StainVectors v;
  v.hematoxylin = h.normalized();
  v.dab = dab.normalized();
  v.residual = v.hematoxylin.cross(v.dab).normalized();
  return v;
}

StainVectors StainVectors::hdab_default() {
  return from_raw({0.650, 0.704, 0.286}, {0.269, 0.568, 0.778});
}

Eigen::Matrix3d StainVectors::matrix() const {
  Eigen::Matrix3d m;
  m.col(0) = hematoxylin;
  m.col(1) = dab;
  m.col(2) = residual;
  return m;
}

Eigen::Vector3d rgb_to_od(Rgb p) noexcept {
  auto od = [](std::uint8_t v) {
    return -std::log10(static_cast<double>(std::max<int>(v, 1)) / 255.0);
  };
  return {od(p.r), od(p.g), od(p.b)};
}

Rgb od_to_rgb(const Eigen::Vector3d &od) noexcept {
  auto ch = [](double v) {
    const double i = 255.0 * std::pow(10.0, -std::max(v, 0.0));
    return static_cast<std::uint8_t>(std::clamp(std::lround(i), 0L, 255L));
  };
  return {ch(od[0]), ch(od[1]), ch(od[2])};
}

namespace {

Eigen::Matrix3d checked_inverse(const StainVectors &v) {
  const Eigen::Matrix3d m = v.matrix();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m);
  const auto s = svd.singularValues();
  MILR_REQUIRE(s[2] > 0.0 && s[0] / s[2] < 100.0,
               ErrorCode::SingularStainMatrix,
               "stain matrix is singular or ill-conditioned");
  return m.inverse();
}

// OD lookup for all 256 intensity levels.
const std::array<double, 256> &od_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i)
      t[i] = -std::log10(static_cast<double>(std::max(i, 1)) / 255.0);
    return t;
  }();
  return table;
}

} // namespace

Eigen::Vector3d unmix_od(const Eigen::Vector3d &od, const StainVectors &v) {
  return checked_inverse(v) * od;
}

StainChannels deconvolve_hdab(const RgbImage &patch, const StainVectors &v) {
  const Eigen::Matrix3d inv = checked_inverse(v);
  const auto &od = od_table();
  StainChannels out;
  out.width = patch.width();
  out.height = patch.height();
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height;
  out.hematoxylin.resize(n);
  out.dab.resize(n);
  out.residual.resize(n);
  const auto px = patch.bytes();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d c =
        inv * Eigen::Vector3d(od[px[3 * i]], od[px[3 * i + 1]], od[px[3 * i + 2]]);
    out.hematoxylin[i] = c[0];
    out.dab[i] = c[1];
    out.residual[i] = c[2];
  }
  return out;
}

namespace {

struct Moments {
  double sum = 0.0, sq = 0.0;
  void add(double v) {
    sum += v;
    sq += v * v;
  }
  double mean(double n) const { return sum / n; }
  double sd(double n) const {
    const double m = sum / n;
    return std::sqrt(std::max(0.0, sq / n - m * m));
  }
};

int hist_bin(double v) {
  const double c = std::clamp(v, 0.0, 2.0);
  return std::min(7, static_cast<int>(c / 0.25));
}

} // namespace

std::array<double, kHandcraftedDim>
extract_handcrafted(const RgbImage &patch, const FeatureConfig &cfg) {
  MILR_REQUIRE(patch.width() == cfg.patch_size &&
                   patch.height() == cfg.patch_size,
               ErrorCode::WrongPatchSize,
               "patch is " + std::to_string(patch.width()) + "x" +
                   std::to_string(patch.height()) + ", expected " +
                   std::to_string(cfg.patch_size));
  const StainChannels ch = deconvolve_hdab(patch, cfg.stains);
  const int w = patch.width(), h = patch.height();
  const double n = static_cast<double>(w) * h;
  const auto px = patch.bytes();

  std::array<double, kHandcraftedDim> f{};
  Moments mh, md, mr, mg;
  double dab_pos = 0.0, tissue = 0.0, sat = 0.0;
  std::vector<double> lum(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < lum.size(); ++i) {
    mh.add(ch.hematoxylin[i]);
    md.add(ch.dab[i]);
    mr.add(ch.residual[i]);
    dab_pos += ch.dab[i] >= cfg.dab_positive_od;
    f[7 + hist_bin(ch.dab[i])] += 1.0;
    f[15 + hist_bin(ch.hematoxylin[i])] += 1.0;
    const double r = px[3 * i], g = px[3 * i + 1], b = px[3 * i + 2];
    lum[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    tissue += lum[i] <= cfg.tissue_luminance_max;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    sat += mx > 0.0 ? (mx - mn) / mx : 0.0;
  }
  // Central differences with clamped borders; symmetric under the dihedral
  // group, so the magnitude statistics are too.
  auto L = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return lum[static_cast<std::size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (L(x + 1, y) - L(x - 1, y));
      const double gy = 0.5 * (L(x, y + 1) - L(x, y - 1));
      mg.add(std::sqrt(gx * gx + gy * gy));
    }

  f[0] = mh.mean(n);
  f[1] = mh.sd(n);
  f[2] = md.mean(n);
  f[3] = md.sd(n);
  f[4] = mr.mean(n);
  f[5] = mr.sd(n);
  f[6] = dab_pos / n;
  for (int b = 7; b < 23; ++b)
    f[b] /= n;
  f[23] = mg.mean(n);
  f[24] = mg.sd(n);
  f[25] = tissue / n;
  f[26] = sat / n;
  return f;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'I', 'L', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

void put_u32(std::ostream &out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char *>(b), 4);
}

std::uint32_t get_u32(const unsigned char *b) {
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

std::filesystem::path feature_index_path(const std::filesystem::path &path) {
  auto p = path;
  p.replace_extension(".index.json");
  return p;
}

void write_features(const FeatureMatrix &m, const std::filesystem::path &path) {
  MILR_REQUIRE(m.values.size() == static_cast<std::size_t>(m.n) * m.d,
               ErrorCode::DimensionMismatch,
               "feature matrix value count does not match n*d");
  MILR_REQUIRE(m.index.empty() || m.index.size() == m.n,
               ErrorCode::DimensionMismatch,
               "feature index length does not match n");
  for (float v : m.values)
    MILR_REQUIRE(std::isfinite(v), ErrorCode::NonFiniteValue,
                 "feature matrix contains a non-finite value");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kFeatureVersion);
  put_u32(out, m.n);
  put_u32(out, m.d);
  for (float v : m.values)
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out)
    fail(ErrorCode::Io, "short write on " + path.string());

  nlohmann::json idx = nlohmann::json::array();
  for (const auto &r : m.index)
    idx.push_back({{"slide", r.slide_id},
                   {"grid_x", r.grid_x},
                   {"grid_y", r.grid_y},
                   {"patch_x", r.patch_x},
                   {"patch_y", r.patch_y}});
  std::ofstream ij(feature_index_path(path), std::ios::binary);
  if (!ij)
    fail(ErrorCode::Io, "cannot write " + feature_index_path(path).string());
  ij << idx.dump() << "\n";
}

FeatureMatrix read_features(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::Io, "cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  MILR_REQUIRE(bytes.size() >= 16, ErrorCode::TruncatedFile,
               path.string() + ": header truncated");
  MILR_REQUIRE(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::BadMagic,
               path.string() + ": bad magic");
  const std::uint32_t version = get_u32(&bytes[4]);
  MILR_REQUIRE(version == kFeatureVersion, ErrorCode::VersionMismatch,
               path.string() + ": unsupported version " +
                   std::to_string(version));
  FeatureMatrix m;
  m.n = get_u32(&bytes[8]);
  m.d = get_u32(&bytes[12]);
  const std::size_t count = static_cast<std::size_t>(m.n) * m.d;
  MILR_REQUIRE(bytes.size() - 16 >= count * 4, ErrorCode::TruncatedFile,
               path.string() + ": declares " + std::to_string(m.n) +
                   " rows but the payload is shorter");
  m.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    m.values[i] = std::bit_cast<float>(get_u32(&bytes[16 + 4 * i]));
    MILR_REQUIRE(std::isfinite(m.values[i]), ErrorCode::NonFiniteValue,
                 path.string() + ": non-finite value at row " +
                     std::to_string(i / std::max<std::uint32_t>(m.d, 1)));
  }

  const auto ipath = feature_index_path(path);
  if (std::filesystem::exists(ipath)) {
    std::ifstream ij(ipath);
    nlohmann::json idx;
    try {
      idx = nlohmann::json::parse(ij);
      for (const auto &r : idx)
        m.index.push_back({r.at("slide").get<std::string>(),
                           r.at("grid_x").get<int>(), r.at("grid_y").get<int>(),
                           r.at("patch_x").get<int>(),
                           r.at("patch_y").get<int>()});
    } catch (const nlohmann::json::exception &e) {
      fail(ErrorCode::MalformedJson, ipath.string() + ": " + e.what());
    }
    MILR_REQUIRE(m.index.size() == m.n, ErrorCode::DimensionMismatch,
                 ipath.string() + ": index length does not match n");
  }
  return m;
}

} // namespace milr
