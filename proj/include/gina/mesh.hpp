#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gina/render.hpp"
#include "gina/types.hpp"

namespace gina {

struct Mesh {
  std::vector<Vec3> vertices;  // meters, object frame
  std::vector<std::array<std::int64_t, 3>> faces;
  std::vector<Vec3> colors;  // empty or one rgb in [0, 1] per vertex

  bool empty() const { return faces.empty(); }
  double face_area(std::size_t f) const;
  double surface_area() const;

  /// Throws std::invalid_argument on out-of-range indices, degenerate faces or a
  /// color count that does not match the vertex count.
  void validate() const;

  /// Drops zero-area faces and vertices no face references.
  void remove_degenerate();
};

/// Triangles (as triples of cube-edge ids 0..11) for each of the 256 corner sign
/// cases. Corner c sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1); bit c of the case
/// is set when that corner is inside.
const std::vector<std::array<int, 3>>& marching_cubes_case(int case_index);

/// Corners (a, b) joined by cube edge e.
std::array<int, 2> marching_cubes_edge(int edge);

/// Samples sigma on a grid_res^3 lattice spanning [-half, half] and runs marching
/// cubes at `threshold`. Vertices are interpolated linearly along lattice edges;
/// colors come from the field at the vertices when `with_color` is set.
Mesh extract_mesh(const FieldFn& field, const Vec3& half, std::int64_t grid_res, double threshold,
                  bool with_color = false);

/// Marching cubes over a plain density grid [n, n, n] indexed (x, y, z).
Mesh marching_cubes(const torch::Tensor& density, const Vec3& half, double threshold);

enum class MeshFormat { obj, ply };

MeshFormat mesh_format_from_string(const std::string& s);
/// Format implied by the file extension.
MeshFormat mesh_format_for(const std::filesystem::path& path);

/// OBJ is ASCII ("v x y z [r g b]", 1-based "f"); PLY is binary little endian with
/// double coordinates and optional uchar colors.
void export_mesh(const Mesh& mesh, const std::filesystem::path& path, MeshFormat format);
void export_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh import_mesh(const std::filesystem::path& path);

}  // namespace gina
