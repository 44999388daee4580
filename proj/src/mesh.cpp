#include "gina/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace gina {

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

struct Tables {
  std::array<std::array<int, 2>, 12> edges{};
  std::array<std::vector<std::array<int, 3>>, 256> cases;

  int edge_between(int a, int b) const {
    for (int e = 0; e < 12; ++e) {
      if ((edges[e][0] == a && edges[e][1] == b) || (edges[e][0] == b && edges[e][1] == a)) return e;
    }
    throw std::logic_error("corners are not adjacent");
  }

  bool share_face(int e1, int e2) const {
    const int all = edges[e1][0] | edges[e1][1] | edges[e2][0] | edges[e2][1];
    const int any = edges[e1][0] & edges[e1][1] & edges[e2][0] & edges[e2][1];
    // Some axis bit is constant across the four corners.
    return (~all & 7) != 0 || any != 0;
  }

  Tables() {
    int n = 0;
    for (int axis = 0; axis < 3; ++axis) {
      for (int c = 0; c < 8; ++c) {
        if (c & (1 << axis)) continue;
        edges[n++] = {c, c | (1 << axis)};
      }
    }
    // Faces with corners listed counter-clockwise seen from outside the cube.
    std::vector<std::array<int, 4>> faces;
    for (int axis = 0; axis < 3; ++axis) {
      const int u = 1 << ((axis + 1) % 3);
      const int v = 1 << ((axis + 2) % 3);
      for (int side = 0; side < 2; ++side) {
        const int base = side ? (1 << axis) : 0;
        std::array<int, 4> ring{base, base | u, base | u | v, base | v};
        if (!side) std::reverse(ring.begin(), ring.end());
        faces.push_back(ring);
      }
    }
    for (int cs = 0; cs < 256; ++cs) {
      auto inside = [cs](int c) { return (cs >> c) & 1; };
      // Each face contributes one directed segment per run of inside corners, from
      // the edge entering the run to the edge leaving it. Diagonal faces therefore
      // keep their inside corners apart, identically in both neighbouring cubes.
      std::array<int, 12> next;
      next.fill(-1);
      for (const auto& ring : faces) {
        for (int i = 0; i < 4; ++i) {
          const int prev = ring[(i + 3) % 4];
          if (!inside(ring[i]) || inside(prev)) continue;
          int j = i;
          while (inside(ring[(j + 1) % 4])) j = (j + 1) % 4;
          const int enter = edge_between(prev, ring[i]);
          const int leave = edge_between(ring[j], ring[(j + 1) % 4]);
          next[enter] = leave;
        }
      }
      std::array<bool, 12> used{};
      for (int e = 0; e < 12; ++e) {
        if (next[e] < 0 || used[e]) continue;
        std::vector<int> loop;
        for (int cur = e; !used[cur]; cur = next[cur]) {
          used[cur] = true;
          loop.push_back(cur);
        }
        // Fan from a vertex whose diagonals stay off the cube faces, so a neighbouring
        // cube never meets the same pair of edge vertices.
        const auto m = loop.size();
        std::size_t apex = 0;
        for (; apex < m; ++apex) {
          bool clean = true;
          for (std::size_t k = 2; k + 1 < m; ++k) {
            clean = clean && !share_face(loop[apex], loop[(apex + k) % m]);
          }
          if (clean) break;
        }
        if (apex == m) throw std::logic_error("no face-free fan for case " + std::to_string(cs));
        for (std::size_t k = 1; k + 1 < m; ++k) {
          cases[cs].push_back({loop[apex], loop[(apex + k) % m], loop[(apex + k + 1) % m]});
        }
      }
    }
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

double Mesh::face_area(std::size_t f) const {
  const auto& t = faces[f];
  const auto& a = vertices[static_cast<std::size_t>(t[0])];
  return 0.5 * norm(cross(sub(vertices[static_cast<std::size_t>(t[1])], a),
                          sub(vertices[static_cast<std::size_t>(t[2])], a)));
}

double Mesh::surface_area() const {
  std::vector<double> areas(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) areas[f] = face_area(f);
  std::sort(areas.begin(), areas.end());
  double s = 0.0;
  for (double a : areas) s += a;
  return s;
}

void Mesh::validate() const {
  const auto nv = static_cast<std::int64_t>(vertices.size());
  if (!colors.empty() && colors.size() != vertices.size()) {
    throw std::invalid_argument("mesh has " + std::to_string(colors.size()) + " colors for " +
                                std::to_string(nv) + " vertices");
  }
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (auto i : faces[f]) {
      if (i < 0 || i >= nv) throw std::invalid_argument("face " + std::to_string(f) + " index out of range");
    }
    if (!(face_area(f) > 0.0)) throw std::invalid_argument("face " + std::to_string(f) + " is degenerate");
  }
  for (const auto& v : vertices) {
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2])) {
      throw std::invalid_argument("mesh vertex is not finite");
    }
  }
}

void Mesh::remove_degenerate() {
  std::vector<std::array<std::int64_t, 3>> kept;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    if (face_area(f) > 0.0) kept.push_back(faces[f]);
  }
  std::vector<std::int64_t> remap(vertices.size(), -1);
  std::vector<Vec3> verts, cols;
  for (auto& t : kept) {
    for (auto& i : t) {
      auto& r = remap[static_cast<std::size_t>(i)];
      if (r < 0) {
        r = static_cast<std::int64_t>(verts.size());
        verts.push_back(vertices[static_cast<std::size_t>(i)]);
        if (!colors.empty()) cols.push_back(colors[static_cast<std::size_t>(i)]);
      }
      i = r;
    }
  }
  faces = std::move(kept);
  vertices = std::move(verts);
  colors = std::move(cols);
}

const std::vector<std::array<int, 3>>& marching_cubes_case(int case_index) {
  if (case_index < 0 || case_index > 255) throw std::out_of_range("marching cubes case out of range");
  return tables().cases[static_cast<std::size_t>(case_index)];
}

std::array<int, 2> marching_cubes_edge(int edge) {
  if (edge < 0 || edge > 11) throw std::out_of_range("cube edge out of range");
  return tables().edges[static_cast<std::size_t>(edge)];
}

Mesh marching_cubes(const torch::Tensor& density, const Vec3& half, double threshold) {
  if (density.dim() != 3 || density.size(0) != density.size(1) || density.size(0) != density.size(2)) {
    throw std::invalid_argument("marching_cubes expects a cubic [n, n, n] grid");
  }
  const auto n = density.size(0);
  if (n < 2) throw std::invalid_argument("marching_cubes needs at least 2 samples per axis");
  auto d = density.to(torch::kFloat64).contiguous();
  const double* s = d.data_ptr<double>();
  auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) { return s[(i * n + j) * n + k]; };
  auto coord = [&](int axis, double i) {
    return -half[static_cast<std::size_t>(axis)] + 2.0 * half[static_cast<std::size_t>(axis)] * i /
                                                       static_cast<double>(n - 1);
  };
  const auto& tb = tables();
  Mesh mesh;
  std::unordered_map<std::int64_t, std::int64_t> edge_vertex;
  auto vertex_on = [&](std::int64_t i, std::int64_t j, std::int64_t k, int e) {
    const auto [a, b] = tb.edges[static_cast<std::size_t>(e)];
    const std::array<std::int64_t, 3> pa{i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1)};
    const int axis = std::countr_zero(static_cast<unsigned>(a ^ b));
    const auto key = ((pa[0] * n + pa[1]) * n + pa[2]) * 3 + axis;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    auto pb = pa;
    pb[static_cast<std::size_t>(axis)] += 1;
    const double va = at(pa[0], pa[1], pa[2]);
    const double vb = at(pb[0], pb[1], pb[2]);
    const double t = std::clamp((threshold - va) / (vb - va), 0.0, 1.0);
    Vec3 p;
    for (int ax = 0; ax < 3; ++ax) {
      const auto ia = static_cast<double>(pa[static_cast<std::size_t>(ax)]);
      p[static_cast<std::size_t>(ax)] = coord(ax, ax == axis ? ia + t : ia);
    }
    const auto id = static_cast<std::int64_t>(mesh.vertices.size());
    mesh.vertices.push_back(p);
    edge_vertex.emplace(key, id);
    return id;
  };
  for (std::int64_t i = 0; i + 1 < n; ++i) {
    for (std::int64_t j = 0; j + 1 < n; ++j) {
      for (std::int64_t k = 0; k + 1 < n; ++k) {
        int cs = 0;
        for (int c = 0; c < 8; ++c) {
          if (at(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) > threshold) cs |= 1 << c;
        }
        for (const auto& tri : tb.cases[static_cast<std::size_t>(cs)]) {
          mesh.faces.push_back({vertex_on(i, j, k, tri[0]), vertex_on(i, j, k, tri[1]),
                                vertex_on(i, j, k, tri[2])});
        }
      }
    }
  }
  mesh.remove_degenerate();
  return mesh;
}

Mesh extract_mesh(const FieldFn& field, const Vec3& half, std::int64_t grid_res, double threshold,
                  bool with_color) {
  if (grid_res < 8) throw std::invalid_argument("grid_res must be at least 8");
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> axes;
  for (int a = 0; a < 3; ++a) {
    axes.push_back(torch::linspace(-half[static_cast<std::size_t>(a)], half[static_cast<std::size_t>(a)],
                                   grid_res, torch::kFloat64));
  }
  auto grid = torch::meshgrid({axes[0], axes[1], axes[2]}, "ij");
  auto points = torch::stack({grid[0], grid[1], grid[2]}, -1).reshape({-1, 3}).to(torch::kFloat32);
  // One z-slab worth of columns per field call keeps peak memory flat.
  const std::int64_t chunk = grid_res * grid_res * 4;
  std::vector<torch::Tensor> sigma;
  for (std::int64_t s = 0; s < points.size(0); s += chunk) {
    sigma.push_back(field(points.slice(0, s, std::min(points.size(0), s + chunk))).sigma.reshape({-1}));
  }
  auto density = torch::cat(sigma).to(torch::kFloat64).view({grid_res, grid_res, grid_res});
  auto mesh = marching_cubes(density, half, threshold);
  if (with_color && !mesh.vertices.empty()) {
    auto v = torch::empty({static_cast<std::int64_t>(mesh.vertices.size()), 3}, torch::kFloat64);
    auto acc = v.accessor<double, 2>();
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      for (int a = 0; a < 3; ++a) acc[static_cast<std::int64_t>(i)][a] = mesh.vertices[i][static_cast<std::size_t>(a)];
    }
    auto rgb = field(v.to(torch::kFloat32)).rgb.to(torch::kFloat64).clamp(0.0, 1.0).contiguous();
    auto r = rgb.accessor<double, 2>();
    mesh.colors.resize(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      for (int a = 0; a < 3; ++a) mesh.colors[i][static_cast<std::size_t>(a)] = r[static_cast<std::int64_t>(i)][a];
    }
  }
  return mesh;
}

MeshFormat mesh_format_from_string(const std::string& s) {
  if (s == "obj") return MeshFormat::obj;
  if (s == "ply") return MeshFormat::ply;
  throw std::invalid_argument("unsupported mesh format '" + s + "' (expected obj or ply)");
}

MeshFormat mesh_format_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  if (!ext.empty()) ext = ext.substr(1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return mesh_format_from_string(ext);
}

namespace {

void write_obj(const Mesh& m, std::ostream& out) {
  out << std::setprecision(17);
  out << "# gina mesh: " << m.vertices.size() << " vertices, " << m.faces.size() << " faces\n";
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    const auto& v = m.vertices[i];
    out << "v " << v[0] << ' ' << v[1] << ' ' << v[2];
    if (!m.colors.empty()) out << ' ' << m.colors[i][0] << ' ' << m.colors[i][1] << ' ' << m.colors[i][2];
    out << '\n';
  }
  for (const auto& f : m.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

Mesh read_obj(std::istream& in) {
  Mesh m;
  std::string line;
  bool any_color = false;
  std::vector<Vec3> colors;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v{};
      ls >> v[0] >> v[1] >> v[2];
      if (!ls) throw std::runtime_error("malformed OBJ vertex: " + line);
      m.vertices.push_back(v);
      Vec3 c{};
      if (ls >> c[0] >> c[1] >> c[2]) any_color = true;
      colors.push_back(c);
    } else if (tag == "f") {
      std::vector<std::int64_t> idx;
      std::string tok;
      while (ls >> tok) {
        auto i = std::stoll(tok.substr(0, tok.find('/')));
        idx.push_back(i < 0 ? static_cast<std::int64_t>(m.vertices.size()) + i : i - 1);
      }
      if (idx.size() < 3) throw std::runtime_error("malformed OBJ face: " + line);
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) m.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  if (any_color) m.colors = std::move(colors);
  return m;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated PLY body");
  return v;
}

void write_ply(const Mesh& m, std::ostream& out) {
  static_assert(std::endian::native == std::endian::little);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << m.vertices.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  const bool col = !m.colors.empty();
  if (col) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << m.faces.size() << "\n";
  out << "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    for (double x : m.vertices[i]) put(out, x);
    if (col) {
      for (double c : m.colors[i]) put(out, static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)));
    }
  }
  for (const auto& f : m.faces) {
    put<std::uint8_t>(out, 3);
    for (auto i : f) put(out, static_cast<std::int32_t>(i));
  }
}

double read_scalar(std::istream& in, const std::string& type) {
  if (type == "double" || type == "float64") return take<double>(in);
  if (type == "float" || type == "float32") return take<float>(in);
  if (type == "uchar" || type == "uint8") return take<std::uint8_t>(in);
  if (type == "int" || type == "int32") return take<std::int32_t>(in);
  if (type == "uint" || type == "uint32") return take<std::uint32_t>(in);
  if (type == "short" || type == "int16") return take<std::int16_t>(in);
  if (type == "ushort" || type == "uint16") return take<std::uint16_t>(in);
  if (type == "char" || type == "int8") return take<std::int8_t>(in);
  throw std::runtime_error("unsupported PLY property type " + type);
}

Mesh read_ply(std::istream& in) {
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw std::runtime_error("not a PLY file");
  struct Prop {
    std::string name, type, count_type;
  };
  std::int64_t nv = 0, nf = 0;
  std::vector<Prop> vprops, fprops;
  std::string element;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw std::runtime_error("only binary_little_endian PLY is supported");
    } else if (tag == "element") {
      std::int64_t count = 0;
      ls >> element >> count;
      if (element == "vertex") nv = count;
      if (element == "face") nf = count;
    } else if (tag == "property") {
      Prop p;
      ls >> p.type;
      if (p.type == "list") ls >> p.count_type >> p.type;
      ls >> p.name;
      (element == "vertex" ? vprops : fprops).push_back(p);
    } else if (tag == "end_header") {
      break;
    }
  }
  Mesh m;
  bool col = false;
  for (const auto& p : vprops) col = col || p.name == "red";
  for (std::int64_t i = 0; i < nv; ++i) {
    Vec3 v{}, c{};
    for (const auto& p : vprops) {
      const double x = read_scalar(in, p.type);
      if (p.name == "x") v[0] = x;
      if (p.name == "y") v[1] = x;
      if (p.name == "z") v[2] = x;
      if (p.name == "red") c[0] = x / 255.0;
      if (p.name == "green") c[1] = x / 255.0;
      if (p.name == "blue") c[2] = x / 255.0;
    }
    m.vertices.push_back(v);
    if (col) m.colors.push_back(c);
  }
  for (std::int64_t f = 0; f < nf; ++f) {
    for (const auto& p : fprops) {
      if (p.count_type.empty()) {
        read_scalar(in, p.type);
        continue;
      }
      const auto k = static_cast<std::int64_t>(read_scalar(in, p.count_type));
      std::vector<std::int64_t> idx;
      for (std::int64_t j = 0; j < k; ++j) idx.push_back(static_cast<std::int64_t>(read_scalar(in, p.type)));
      if (p.name != "vertex_indices" && p.name != "vertex_index") continue;
      for (std::size_t j = 1; j + 1 < idx.size(); ++j) m.faces.push_back({idx[0], idx[j], idx[j + 1]});
    }
  }
  return m;
}

}  // namespace

void export_mesh(const Mesh& mesh, const std::filesystem::path& path, MeshFormat format) {
  if (!mesh.empty()) mesh.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (format == MeshFormat::obj) {
    write_obj(mesh, out);
  } else {
    write_ply(mesh, out);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void export_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  export_mesh(mesh, path, mesh_format_for(path));
}

Mesh import_mesh(const std::filesystem::path& path) {
  const auto format = mesh_format_for(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto m = format == MeshFormat::obj ? read_obj(in) : read_ply(in);
  for (const auto& f : m.faces) {
    for (auto i : f) {
      if (i < 0 || i >= static_cast<std::int64_t>(m.vertices.size())) {
        throw std::runtime_error(path.string() + ": face index out of range");
      }
    }
  }
  return m;
}

}  // namespace gina
