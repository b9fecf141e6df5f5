#ifndef HEADSTAB_OBJ_IO_HPP
#define HEADSTAB_OBJ_IO_HPP

#include <array>
#include <string>
#include <vector>

#include "headstab/geometry.hpp"

namespace headstab {

struct ObjMesh {
  VertexBlock vertices;                   // 4 x N homogeneous
  std::vector<std::array<int, 3>> faces;  // zero-based
};

/// ASCII OBJ, positions and triangle faces only. Polygons with more than
/// three corners are fanned into triangles on read.
ObjMesh read_obj(const std::string& path);
void write_obj(const std::string& path, const VertexBlock& vertices,
               const std::vector<std::array<int, 3>>& faces);

}  // namespace headstab

#endif  // HEADSTAB_OBJ_IO_HPP
