#include "headstab/obj_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "headstab/container.hpp"

namespace headstab {

ObjMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_obj: cannot open " + path);
  std::vector<Eigen::Vector3d> verts;
  std::vector<std::array<int, 3>> faces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) {
        throw std::runtime_error("read_obj: bad vertex at line " + std::to_string(lineno));
      }
      verts.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> corners;
      std::string item;
      while (ss >> item) {
        // Accept v, v/vt, v/vt/vn and v//vn forms.
        const int idx = std::stoi(item.substr(0, item.find('/')));
        const int resolved = idx > 0 ? idx - 1 : static_cast<int>(verts.size()) + idx;
        if (resolved < 0) {
          throw std::runtime_error("read_obj: bad face index at line " + std::to_string(lineno));
        }
        corners.push_back(resolved);
      }
      if (corners.size() < 3) {
        throw std::runtime_error("read_obj: degenerate face at line " + std::to_string(lineno));
      }
      for (std::size_t i = 2; i < corners.size(); ++i) {
        faces.push_back({corners[0], corners[i - 1], corners[i]});
      }
    }
  }
  for (const auto& f : faces) {
    for (int c : f) {
      if (c >= static_cast<int>(verts.size())) {
        throw std::runtime_error("read_obj: face index out of range in " + path);
      }
    }
  }
  ObjMesh mesh;
  mesh.vertices.resize(4, static_cast<Eigen::Index>(verts.size()));
  for (std::size_t i = 0; i < verts.size(); ++i) {
    mesh.vertices.col(i) << verts[i], 1.0;
  }
  mesh.faces = std::move(faces);
  return mesh;
}

void write_obj(const std::string& path, const VertexBlock& vertices,
               const std::vector<std::array<int, 3>>& faces) {
  std::string out;
  out.reserve(vertices.cols() * 40 + faces.size() * 20);
  char buf[128];
  for (Eigen::Index i = 0; i < vertices.cols(); ++i) {
    std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", vertices(0, i), vertices(1, i),
                  vertices(2, i));
    out += buf;
  }
  for (const auto& f : faces) {
    std::snprintf(buf, sizeof(buf), "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out += buf;
  }
  atomic_write_file(path, out);
}

}  // namespace headstab
