#pragma once

#include "splatlab/gaussian.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace splatlab {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

/// Vertex property names in file order for the given SH degree.
inline std::vector<std::string> ply_property_names(int sh_degree) {
  std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  if (sh_degree >= 1) {
    for (int i = 0; i < kShRestCount; ++i) names.push_back("f_rest_" + std::to_string(i));
  }
  names.push_back("opacity");
  for (int i = 0; i < 3; ++i) names.push_back("scale_" + std::to_string(i));
  for (int i = 0; i < 4; ++i) names.push_back("rot_" + std::to_string(i));
  return names;
}

/// Binary little-endian PLY with float32 properties.
inline void write_ply(std::ostream& out, const GaussianCloud& cloud) {
  const auto names = ply_property_names(cloud.sh_degree());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << '\n';
  for (const auto& n : names) out << "property float " << n << '\n';
  out << "end_header\n";
  std::vector<float> row;
  row.reserve(names.size());
  for (const Gaussian& g : cloud.gaussians()) {
    row.clear();
    for (int a = 0; a < 3; ++a) row.push_back(static_cast<float>(g.position[a]));
    for (int a = 0; a < 3; ++a) row.push_back(0.0f);
    for (int a = 0; a < 3; ++a) row.push_back(static_cast<float>(g.color[a]));
    if (cloud.sh_degree() >= 1) {
      for (int i = 0; i < kShRestCount; ++i) row.push_back(static_cast<float>(g.sh_rest[i]));
    }
    row.push_back(static_cast<float>(g.opacity_logit));
    for (int a = 0; a < 3; ++a) row.push_back(static_cast<float>(g.log_scale[a]));
    for (int a = 0; a < 4; ++a) row.push_back(static_cast<float>(g.rotation[a]));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("ply: write failed");
}

inline void save_ply(const std::filesystem::path& path, const GaussianCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_ply(out, cloud);
}

namespace detail {

inline std::size_t ply_type_size(const std::string& type) {
  static const std::map<std::string, std::size_t> sizes = {
      {"char", 1},  {"int8", 1},   {"uchar", 1},  {"uint8", 1},   {"short", 2},
      {"int16", 2}, {"ushort", 2}, {"uint16", 2}, {"int", 4},     {"int32", 4},
      {"uint", 4},  {"uint32", 4}, {"float", 4},  {"float32", 4}, {"double", 8},
      {"float64", 8}};
  const auto it = sizes.find(type);
  if (it == sizes.end()) throw FormatError("ply: unsupported property type '" + type + "'");
  return it->second;
}

inline double ply_read_scalar(const char* p, const std::string& type) {
  auto get = [p](auto v) {
    std::memcpy(&v, p, sizeof(v));
    return static_cast<double>(v);
  };
  if (type == "float" || type == "float32") return get(float{});
  if (type == "double" || type == "float64") return get(double{});
  if (type == "char" || type == "int8") return get(std::int8_t{});
  if (type == "uchar" || type == "uint8") return get(std::uint8_t{});
  if (type == "short" || type == "int16") return get(std::int16_t{});
  if (type == "ushort" || type == "uint16") return get(std::uint16_t{});
  if (type == "int" || type == "int32") return get(std::int32_t{});
  return get(std::uint32_t{});
}

struct PlyProperty {
  std::string name;
  std::string type;
  std::size_t offset = 0;
};

}  // namespace detail

/// Reads a binary little-endian Gaussian PLY. The SH degree is 1 when all
/// nine f_rest_* properties are present, 0 otherwise.
inline GaussianCloud read_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw FormatError("ply: missing magic line");
  std::size_t count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  std::vector<detail::PlyProperty> props;
  std::size_t stride = 0;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") {
      header_done = true;
      break;
    }
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw FormatError("ply: unsupported format '" + fmt + "'");
    } else if (word == "element") {
      std::string name;
      ls >> name;
      if (seen_vertex) throw FormatError("ply: elements after 'vertex' are not supported");
      in_vertex = name == "vertex";
      if (!in_vertex) throw FormatError("ply: unexpected element '" + name + "'");
      seen_vertex = true;
      if (!(ls >> count)) throw FormatError("ply: bad vertex count");
    } else if (word == "property") {
      std::string type, name;
      ls >> type;
      if (type == "list") throw FormatError("ply: list properties are not supported");
      ls >> name;
      if (!in_vertex) throw FormatError("ply: property outside vertex element");
      props.push_back({name, type, stride});
      stride += detail::ply_type_size(type);
    }
  }
  if (!header_done) throw FormatError("ply: truncated header");
  if (!seen_vertex) throw FormatError("ply: missing vertex element");

  auto find = [&](const std::string& name) -> const detail::PlyProperty* {
    for (const auto& p : props) {
      if (p.name == name) return &p;
    }
    return nullptr;
  };
  bool has_rest = true;
  for (int i = 0; i < kShRestCount; ++i) has_rest = has_rest && find("f_rest_" + std::to_string(i));
  const int degree = has_rest ? 1 : 0;
  std::vector<const detail::PlyProperty*> used;
  for (const auto& n : ply_property_names(degree)) {
    if (n == "nx" || n == "ny" || n == "nz") {
      used.push_back(find(n));
      continue;
    }
    const auto* p = find(n);
    if (!p) throw FormatError("ply: missing property " + n);
    used.push_back(p);
  }

  std::vector<char> buf(stride);
  std::vector<Gaussian> gaussians;
  gaussians.reserve(count);
  for (std::size_t v = 0; v < count; ++v) {
    if (!in.read(buf.data(), static_cast<std::streamsize>(stride))) {
      throw FormatError("ply: truncated vertex data (" + std::to_string(v) + " of " +
                        std::to_string(count) + " vertices)");
    }
    std::size_t k = 0;
    auto next = [&] {
      const auto* p = used[k++];
      return p ? detail::ply_read_scalar(buf.data() + p->offset, p->type) : 0.0;
    };
    Gaussian g;
    for (int a = 0; a < 3; ++a) g.position[a] = next();
    for (int a = 0; a < 3; ++a) next();
    for (int a = 0; a < 3; ++a) g.color[a] = next();
    if (degree >= 1) {
      for (int i = 0; i < kShRestCount; ++i) g.sh_rest[i] = next();
    }
    g.opacity_logit = next();
    for (int a = 0; a < 3; ++a) g.log_scale[a] = next();
    for (int a = 0; a < 4; ++a) g.rotation[a] = next();
    gaussians.push_back(g);
  }
  return GaussianCloud(std::move(gaussians), degree);
}

inline GaussianCloud load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_ply(in);
}

}  // namespace splatlab
