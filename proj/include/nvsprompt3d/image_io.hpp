// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/types.hpp>

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace nvsp {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// 8-bit quantization used at every image file edge: round-half-up of 255*v.
inline std::uint8_t quantize_channel(float v) {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f));
}

inline void write_png(const std::filesystem::path &path, const Image &image) {
  if (image.empty()) fail(ErrorCode::IoFailure, path.string() + ": empty image");
  for (float v : image.data)
    if (!std::isfinite(v)) fail(ErrorCode::IoFailure, path.string() + ": non-finite pixel");

  std::vector<std::uint8_t> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), quantize_channel);

  std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::IoFailure, "libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoFailure, "libpng write failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * image.width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Loads any 8/16-bit PNG as RGB in [0,1] (gray expanded, alpha dropped).
inline Image read_png(const std::filesystem::path &path) {
  std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  if (!fp) fail(ErrorCode::MissingFile, "image: cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    fail(ErrorCode::IoFailure, path.string() + ": not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::IoFailure, "libpng init failed for " + path.string());
  }
  Image image;
  std::vector<std::uint8_t> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::IoFailure, "libpng read failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color_type = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  rows.resize(stride * image.height);
  for (int y = 0; y < image.height; ++y) png_read_row(png, rows.data() + static_cast<std::size_t>(y) * stride, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  image.data.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width * 3; ++x)
      image.data[static_cast<std::size_t>(y) * image.width * 3 + x] =
          rows[static_cast<std::size_t>(y) * stride + x] / 255.0f;
  return image;
}

/// Applies the PNG quantization in memory, so renders can be compared with
/// what a file round-trip would produce.
inline Image quantized(const Image &image) {
  Image out = image;
  for (auto &v : out.data) v = quantize_channel(v) / 255.0f;
  return out;
}

namespace detail {

inline std::vector<char> read_all(const std::filesystem::path &path, ErrorCode missing, const std::string &field) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(missing, field + ": cannot open " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void put_u32(std::string &buf, std::uint32_t v) { buf.append(reinterpret_cast<const char *>(&v), 4); }

inline std::uint32_t get_u32(const std::vector<char> &buf, std::size_t off) {
  std::uint32_t v;
  std::memcpy(&v, buf.data() + off, 4);
  return v;
}

inline void write_all(const std::filesystem::path &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

} // namespace detail

// Depth map file: "DMAP", u32 width, u32 height, u32 reserved (0), then
// width*height little-endian float32 in row-major order. Invalid pixels are 0.

inline void write_depth(const std::filesystem::path &path, const DepthMap &depth) {
  std::string buf = "DMAP";
  detail::put_u32(buf, static_cast<std::uint32_t>(depth.width));
  detail::put_u32(buf, static_cast<std::uint32_t>(depth.height));
  detail::put_u32(buf, 0);
  for (float v : depth.values) {
    if (!std::isfinite(v)) fail(ErrorCode::IoFailure, path.string() + ": non-finite depth");
    const float stored = v > 0.0f ? v : 0.0f;
    buf.append(reinterpret_cast<const char *>(&stored), 4);
  }
  detail::write_all(path, buf);
}

inline DepthMap read_depth(const std::filesystem::path &path, int pose_id) {
  const auto buf = detail::read_all(path, ErrorCode::MissingFile, "depth[" + std::to_string(pose_id) + "]");
  if (buf.size() < 16 || std::memcmp(buf.data(), "DMAP", 4) != 0)
    fail(ErrorCode::SchemaViolation, "depth[" + std::to_string(pose_id) + "]: bad DMAP header in " + path.string());
  DepthMap d;
  d.pose_id = pose_id;
  d.width = static_cast<int>(detail::get_u32(buf, 4));
  d.height = static_cast<int>(detail::get_u32(buf, 8));
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height;
  if (buf.size() != 16 + 4 * n)
    fail(ErrorCode::DimensionMismatch, "depth[" + std::to_string(pose_id) + "]: payload size does not match header");
  d.values.resize(n);
  std::memcpy(d.values.data(), buf.data() + 16, 4 * n);
  for (float v : d.values)
    if (!std::isfinite(v)) fail(ErrorCode::SchemaViolation, "depth[" + std::to_string(pose_id) + "]: non-finite value");
  return d;
}

// Feature file: "FVEC", u32 rows, u32 cols, u32 reserved (0), then rows*cols
// little-endian float64 in row-major order.

inline void write_features(const std::filesystem::path &path, const Eigen::MatrixXd &rows) {
  if (!rows.allFinite()) fail(ErrorCode::IoFailure, path.string() + ": non-finite feature value");
  std::string buf = "FVEC";
  detail::put_u32(buf, static_cast<std::uint32_t>(rows.rows()));
  detail::put_u32(buf, static_cast<std::uint32_t>(rows.cols()));
  detail::put_u32(buf, 0);
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      const double v = rows(r, c);
      buf.append(reinterpret_cast<const char *>(&v), 8);
    }
  detail::write_all(path, buf);
}

inline Eigen::MatrixXd read_features(const std::filesystem::path &path) {
  const auto buf = detail::read_all(path, ErrorCode::MissingFile, "features");
  if (buf.size() < 16 || std::memcmp(buf.data(), "FVEC", 4) != 0)
    fail(ErrorCode::SchemaViolation, "features: bad FVEC header in " + path.string());
  const std::size_t rows = detail::get_u32(buf, 4), cols = detail::get_u32(buf, 8);
  if (buf.size() != 16 + 8 * rows * cols)
    fail(ErrorCode::DimensionMismatch, "features: payload size does not match header in " + path.string());
  Eigen::MatrixXd out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) std::memcpy(&out(r, c), buf.data() + 16 + 8 * (r * cols + c), 8);
  return out;
}

} // namespace nvsp
