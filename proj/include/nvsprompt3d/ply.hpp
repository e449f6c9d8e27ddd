// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/types.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

namespace nvsp {

namespace detail {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline bool parse_ply_type(const std::string &name, PlyType &out) {
  static const std::array<std::pair<const char *, PlyType>, 16> table{{
      {"char", PlyType::Int8},     {"int8", PlyType::Int8},       {"uchar", PlyType::UInt8},
      {"uint8", PlyType::UInt8},   {"short", PlyType::Int16},     {"int16", PlyType::Int16},
      {"ushort", PlyType::UInt16}, {"uint16", PlyType::UInt16},   {"int", PlyType::Int32},
      {"int32", PlyType::Int32},   {"uint", PlyType::UInt32},     {"uint32", PlyType::UInt32},
      {"float", PlyType::Float32}, {"float32", PlyType::Float32}, {"double", PlyType::Float64},
      {"float64", PlyType::Float64},
  }};
  for (const auto &[key, type] : table) {
    if (name == key) {
      out = type;
      return true;
    }
  }
  return false;
}

inline std::size_t ply_type_size(PlyType t) {
  switch (t) {
  case PlyType::Int8:
  case PlyType::UInt8: return 1;
  case PlyType::Int16:
  case PlyType::UInt16: return 2;
  case PlyType::Int32:
  case PlyType::UInt32:
  case PlyType::Float32: return 4;
  case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

template <typename T> T read_le(const unsigned char *p) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline double decode_ply_scalar(PlyType t, const unsigned char *p) {
  switch (t) {
  case PlyType::Int8: return read_le<std::int8_t>(p);
  case PlyType::UInt8: return read_le<std::uint8_t>(p);
  case PlyType::Int16: return read_le<std::int16_t>(p);
  case PlyType::UInt16: return read_le<std::uint16_t>(p);
  case PlyType::Int32: return read_le<std::int32_t>(p);
  case PlyType::UInt32: return read_le<std::uint32_t>(p);
  case PlyType::Float32: return read_le<float>(p);
  case PlyType::Float64: return read_le<double>(p);
  }
  return 0.0;
}

} // namespace detail

/// Reads a PLY point cloud with x,y,z and uchar red,green,blue vertex
/// properties, in ascii or binary_little_endian encoding. Other elements and
/// properties are skipped.
inline PointCloud load_ply(const std::filesystem::path &path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, "point_cloud: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto next_line = [&](std::string &line) {
    if (pos >= bytes.size()) return false;
    std::size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    line.assign(reinterpret_cast<const char *>(bytes.data()) + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;
    return true;
  };

  std::string line;
  if (!next_line(line) || line != "ply") fail(ErrorCode::MalformedHeader, path.string() + ": missing 'ply' magic");

  bool binary = false, have_format = false, have_end = false;
  std::vector<PlyElement> elements;
  while (next_line(line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key.empty() || key == "comment" || key == "obj_info") continue;
    if (key == "format") {
      std::string fmt, version;
      ss >> fmt >> version;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else if (fmt == "binary_big_endian") fail(ErrorCode::UnsupportedPlyVariant, path.string() + ": big-endian PLY");
      else fail(ErrorCode::MalformedHeader, path.string() + ": unknown format '" + fmt + "'");
      have_format = true;
    } else if (key == "element") {
      PlyElement e;
      long long count = -1;
      ss >> e.name >> count;
      if (e.name.empty() || count < 0 || ss.fail())
        fail(ErrorCode::MalformedHeader, path.string() + ": bad element line '" + line + "'");
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (key == "property") {
      if (elements.empty()) fail(ErrorCode::MalformedHeader, path.string() + ": property before element");
      PlyProperty p;
      std::string type;
      ss >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ss >> count_type >> item_type >> p.name;
        p.is_list = true;
        if (!parse_ply_type(count_type, p.count_type) || !parse_ply_type(item_type, p.type))
          fail(ErrorCode::MalformedHeader, path.string() + ": bad list property '" + line + "'");
      } else {
        ss >> p.name;
        if (!parse_ply_type(type, p.type))
          fail(ErrorCode::MalformedHeader, path.string() + ": unknown property type '" + type + "'");
      }
      if (p.name.empty()) fail(ErrorCode::MalformedHeader, path.string() + ": unnamed property");
      elements.back().properties.push_back(p);
    } else if (key == "end_header") {
      have_end = true;
      break;
    } else {
      fail(ErrorCode::MalformedHeader, path.string() + ": unexpected header keyword '" + key + "'");
    }
  }
  if (!have_format) fail(ErrorCode::MalformedHeader, path.string() + ": missing format line");
  if (!have_end) fail(ErrorCode::MalformedHeader, path.string() + ": missing end_header");

  std::size_t vertex_element = elements.size();
  for (std::size_t i = 0; i < elements.size(); ++i)
    if (elements[i].name == "vertex") vertex_element = i;
  if (vertex_element == elements.size()) fail(ErrorCode::UnsupportedPlyVariant, path.string() + ": no vertex element");

  const auto &vertex = elements[vertex_element];
  std::array<int, 6> slot{-1, -1, -1, -1, -1, -1};
  static const std::array<const char *, 6> wanted{"x", "y", "z", "red", "green", "blue"};
  for (std::size_t p = 0; p < vertex.properties.size(); ++p)
    for (std::size_t w = 0; w < wanted.size(); ++w)
      if (vertex.properties[p].name == wanted[w]) slot[w] = static_cast<int>(p);
  for (std::size_t w = 0; w < wanted.size(); ++w) {
    if (slot[w] < 0) fail(ErrorCode::UnsupportedPlyVariant, path.string() + ": missing vertex property '" +
                                                                  std::string(wanted[w]) + "'");
    const auto &prop = vertex.properties[slot[w]];
    if (prop.is_list) fail(ErrorCode::UnsupportedPlyVariant, path.string() + ": list-typed '" + prop.name + "'");
    if (w >= 3 && prop.type != PlyType::UInt8)
      fail(ErrorCode::UnsupportedPlyVariant, path.string() + ": color '" + prop.name + "' is not uchar");
  }

  PointCloud cloud;
  cloud.positions.resize(vertex.count);
  cloud.colors.resize(vertex.count);
  std::vector<double> values;

  if (!binary) {
    std::string rest(reinterpret_cast<const char *>(bytes.data()) + std::min(pos, bytes.size()),
                     bytes.size() - std::min(pos, bytes.size()));
    std::istringstream body(rest);
    body.imbue(std::locale::classic());
    for (std::size_t ei = 0; ei <= vertex_element; ++ei) {
      const auto &e = elements[ei];
      for (std::size_t r = 0; r < e.count; ++r) {
        values.clear();
        for (const auto &p : e.properties) {
          if (p.is_list) {
            double n = 0;
            if (!(body >> n)) fail(ErrorCode::IoFailure, path.string() + ": truncated ascii body");
            for (long long k = 0; k < static_cast<long long>(n); ++k) {
              double skip;
              if (!(body >> skip)) fail(ErrorCode::IoFailure, path.string() + ": truncated ascii body");
            }
            values.push_back(0.0);
          } else {
            double v = 0;
            if (!(body >> v)) fail(ErrorCode::IoFailure, path.string() + ": truncated ascii body");
            values.push_back(v);
          }
        }
        if (ei == vertex_element) {
          cloud.positions[r] = Vec3(values[slot[0]], values[slot[1]], values[slot[2]]);
          cloud.colors[r] = Vec3(values[slot[3]], values[slot[4]], values[slot[5]]) / 255.0;
        }
      }
    }
  } else {
    const unsigned char *data = bytes.data();
    auto need = [&](std::size_t n) {
      if (pos + n > bytes.size()) fail(ErrorCode::IoFailure, path.string() + ": truncated binary body");
    };
    for (std::size_t ei = 0; ei <= vertex_element; ++ei) {
      const auto &e = elements[ei];
      for (std::size_t r = 0; r < e.count; ++r) {
        values.clear();
        for (const auto &p : e.properties) {
          if (p.is_list) {
            const std::size_t cs = ply_type_size(p.count_type);
            need(cs);
            const auto n = static_cast<std::size_t>(decode_ply_scalar(p.count_type, data + pos));
            pos += cs;
            need(n * ply_type_size(p.type));
            pos += n * ply_type_size(p.type);
            values.push_back(0.0);
          } else {
            const std::size_t s = ply_type_size(p.type);
            need(s);
            values.push_back(decode_ply_scalar(p.type, data + pos));
            pos += s;
          }
        }
        if (ei == vertex_element) {
          cloud.positions[r] = Vec3(values[slot[0]], values[slot[1]], values[slot[2]]);
          cloud.colors[r] = Vec3(values[slot[3]], values[slot[4]], values[slot[5]]) / 255.0;
        }
      }
    }
  }
  cloud.validate();
  return cloud;
}

/// Writes x,y,z as double and colors as uchar round(255*c).
inline void write_ply(const std::filesystem::path &path, const PointCloud &cloud, bool binary = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  auto quantize = [](double c) {
    return static_cast<std::uint8_t>(std::floor(std::clamp(c, 0.0, 1.0) * 255.0 + 0.5));
  };
  std::ostringstream body;
  body.imbue(std::locale::classic());
  body.precision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 &p = cloud.positions[i];
    const Vec3 &c = cloud.colors[i];
    if (binary) {
      for (int k = 0; k < 3; ++k) {
        const double v = p[k];
        body.write(reinterpret_cast<const char *>(&v), sizeof v);
      }
      for (int k = 0; k < 3; ++k) {
        const std::uint8_t b = quantize(c[k]);
        body.write(reinterpret_cast<const char *>(&b), 1);
      }
    } else {
      body << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << int(quantize(c.x())) << ' ' << int(quantize(c.y())) << ' '
           << int(quantize(c.z())) << '\n';
    }
  }
  out << body.str();
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

} // namespace nvsp
