#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gdpnet/tensor.hpp"

namespace gdpnet {

// Fixed-topology triangle mesh. Vertex order is the topology contract:
// all meshes of a dataset share connectivity, and correspondence is
// positional. Face lines are carried verbatim so writing preserves the
// connectivity exactly as read.
struct Mesh {
  Tensor2<double> vertices;             // N x 3, mm
  std::vector<std::string> face_lines;  // "f ..." lines, verbatim

  size_t vertex_count() const { return vertices.rows; }

  std::vector<double> flat() const { return vertices.data; }

  void set_flat(const std::vector<double>& v) {
    if (v.size() != vertices.size())
      throw_shape("Mesh::set_flat: got " + std::to_string(v.size()) +
                  " values for " + std::to_string(vertices.size()));
    vertices.data = v;
  }
};

// Connectivity fingerprint: vertex count plus every face line.
inline std::string mesh_topology_id(const Mesh& m) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (int i = 0; i < 8; ++i) mix((unsigned char)(m.vertex_count() >> (8 * i)));
  for (const auto& line : m.face_lines) {
    for (char c : line) mix((unsigned char)c);
    mix('\n');
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

// Wavefront OBJ subset: v lines become vertices, f lines are preserved
// verbatim, anything else (comments, normals, texcoords, groups) is
// ignored. Malformed v lines are reported with their line number.
inline Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("load_mesh: cannot open " + path);
  std::vector<double> coords;
  std::vector<std::string> faces;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z))
        throw_data("load_mesh: malformed vertex at " + path + " line " +
                   std::to_string(lineno));
      coords.push_back(x);
      coords.push_back(y);
      coords.push_back(z);
    } else if (tag == "f") {
      faces.push_back(line);
    }
  }
  Mesh m;
  const size_t n = coords.size() / 3;
  m.vertices = Tensor2<double>(n, 3, std::move(coords));
  m.face_lines = std::move(faces);
  return m;
}

inline void write_mesh(const Mesh& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("write_mesh: cannot open " + path);
  char buf[128];
  for (size_t i = 0; i < m.vertex_count(); ++i) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", m.vertices(i, 0),
                  m.vertices(i, 1), m.vertices(i, 2));
    out << buf;
  }
  for (const auto& f : m.face_lines) out << f << '\n';
  if (!out) throw_data("write_mesh: write failed for " + path);
}

}  // namespace gdpnet
