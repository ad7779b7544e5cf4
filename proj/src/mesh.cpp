#include "vpl/mesh.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "vpl/image.hpp"
#include <nlohmann/json.hpp>

namespace vpl {

void Mesh::validate() const {
  const int nv = int(vertices.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto& fc = faces[f];
    for (int k = 0; k < 3; ++k)
      if (fc[k] < 0 || fc[k] >= nv)
        throw Error("mesh: face " + std::to_string(f) +
                    " references vertex " + std::to_string(fc[k]) +
                    " out of range (vertex count " + std::to_string(nv) + ")");
    if (fc[0] == fc[1] || fc[1] == fc[2] || fc[0] == fc[2])
      throw Error("mesh: face " + std::to_string(f) +
                  " references the same vertex twice");
  }
  if (!texture.empty()) {
    if (texture.size() != 6)
      throw Error("mesh: texture must have exactly 6 grids, got " +
                  std::to_string(texture.size()));
    int t = texture[0].size;
    for (const auto& g : texture) {
      if (g.size != t) throw Error("mesh: texture grids differ in size");
      for (double v : g.texels)
        if (v < 0.0 || v > 1.0)
          throw Error("mesh: texture values must lie in [0,1]");
    }
    if (face_uv.size() != faces.size())
      throw Error("mesh: textured mesh needs one FaceUV per face");
  }
}

Viewpoint Viewpoint::make(double az, double el, double dist) {
  if (dist <= 0) throw Error("viewpoint: distance must be > 0");
  if (el < -90 || el > 90)
    throw Error("viewpoint: elevation must lie in [-90, 90]");
  az = std::fmod(az, 360.0);
  if (az < 0) az += 360.0;
  return Viewpoint{az, el, dist};
}

namespace {

struct CubeFaceFrame {
  Vec3 origin, u_axis, v_axis;
};

// For each face, u_axis x v_axis points outward.
const std::array<CubeFaceFrame, 6> kCubeFaces = {{
    {{0.5, -0.5, -0.5}, {0, 1, 0}, {0, 0, 1}},   // +x
    {{-0.5, -0.5, -0.5}, {0, 0, 1}, {0, 1, 0}},  // -x
    {{-0.5, 0.5, -0.5}, {0, 0, 1}, {1, 0, 0}},   // +y
    {{-0.5, -0.5, -0.5}, {1, 0, 0}, {0, 0, 1}},  // -y
    {{-0.5, -0.5, 0.5}, {1, 0, 0}, {0, 1, 0}},   // +z
    {{-0.5, -0.5, -0.5}, {0, 1, 0}, {1, 0, 0}},  // -z
}};

}  // namespace

CubeTemplate make_cube_template(int texture_size) {
  const int n = CubeTemplate::kGrid;
  CubeTemplate tmpl;
  Mesh& m = tmpl.mesh;

  // Grid positions are multiples of 1/15 offset by -0.5; scaling by 30 makes
  // them exact integers, so deduplication is exact.
  std::map<std::tuple<long, long, long>, int> index_of;
  auto global_index = [&](const Vec3& p) {
    auto key = std::make_tuple(std::lround(p.x * 30), std::lround(p.y * 30),
                               std::lround(p.z * 30));
    auto it = index_of.find(key);
    if (it != index_of.end()) return it->second;
    int idx = int(m.vertices.size());
    m.vertices.push_back(p);
    index_of.emplace(key, idx);
    return idx;
  };

  for (int f = 0; f < 6; ++f) {
    const auto& fr = kCubeFaces[f];
    tmpl.grid_index[f].resize(n * n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        Vec3 p = fr.origin + fr.u_axis * (double(i) / (n - 1)) +
                 fr.v_axis * (double(j) / (n - 1));
        tmpl.grid_index[f][j * n + i] = global_index(p);
      }
    for (int j = 0; j + 1 < n; ++j)
      for (int i = 0; i + 1 < n; ++i) {
        int a = tmpl.grid_index[f][j * n + i];
        int b = tmpl.grid_index[f][j * n + i + 1];
        int c = tmpl.grid_index[f][(j + 1) * n + i + 1];
        int d = tmpl.grid_index[f][(j + 1) * n + i];
        double u0 = double(i) / (n - 1), u1 = double(i + 1) / (n - 1);
        double v0 = double(j) / (n - 1), v1 = double(j + 1) / (n - 1);
        // fixed diagonal split (i,j) -> (i+1,j+1)
        m.faces.push_back({a, b, c});
        m.face_uv.push_back({f, {u0, u1, u1}, {v0, v0, v1}});
        m.faces.push_back({a, c, d});
        m.face_uv.push_back({f, {u0, u1, u0}, {v0, v1, v1}});
      }
  }
  if (int(m.vertices.size()) != CubeTemplate::kVertexCount)
    throw Error("cube template: expected 1352 vertices, built " +
                std::to_string(m.vertices.size()));
  if (texture_size > 0) {
    m.texture.assign(6, TextureGrid(texture_size));
    for (auto& g : m.texture)
      std::fill(g.texels.begin(), g.texels.end(), 0.5);
  }
  return tmpl;
}

std::vector<int> mirror_pairing(const std::vector<Vec3>& reference, int axis,
                                double tol) {
  if (axis < 0 || axis > 2) throw Error("mirror_pairing: axis must be 0..2");
  auto coord = [&](const Vec3& p, int a) {
    return a == 0 ? p.x : (a == 1 ? p.y : p.z);
  };
  const double scale = 1.0 / std::max(tol, 1e-15);
  std::map<std::tuple<long, long, long>, std::vector<int>> by_pos;
  auto key_of = [&](Vec3 p) {
    return std::make_tuple(std::lround(p.x * scale), std::lround(p.y * scale),
                           std::lround(p.z * scale));
  };
  for (std::size_t i = 0; i < reference.size(); ++i)
    by_pos[key_of(reference[i])].push_back(int(i));

  std::vector<int> pair_of(reference.size(), -1);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    Vec3 r = reference[i];
    if (axis == 0) r.x = -r.x;
    else if (axis == 1) r.y = -r.y;
    else r.z = -r.z;
    auto it = by_pos.find(key_of(r));
    if (it == by_pos.end() || it->second.empty())
      throw Error("mirror_pairing: vertex " + std::to_string(i) +
                  " has no mirror partner across axis " + std::to_string(axis));
    // pick the first unclaimed candidate for stability with duplicates
    int j = -1;
    for (int cand : it->second)
      if (pair_of[cand] == -1 || pair_of[cand] == int(i)) { j = cand; break; }
    if (j == -1) j = it->second.front();
    pair_of[i] = j;
    if (std::abs(coord(reference[i], axis)) < tol) pair_of[i] = int(i);
  }
  for (std::size_t i = 0; i < reference.size(); ++i)
    if (pair_of[pair_of[i]] != int(i))
      throw Error("mirror_pairing: pairing is not an involution at vertex " +
                  std::to_string(i));
  return pair_of;
}

Mesh symmetrize(const Mesh& mesh, int axis) {
  return symmetrize(mesh, axis, mirror_pairing(mesh.vertices, axis));
}

Mesh symmetrize(const Mesh& mesh, int axis, const std::vector<int>& pairing) {
  if (pairing.size() != mesh.vertices.size())
    throw Error("symmetrize: pairing size does not match vertex count");
  Mesh out = mesh;
  auto reflect = [&](Vec3 p) {
    if (axis == 0) p.x = -p.x;
    else if (axis == 1) p.y = -p.y;
    else p.z = -p.z;
    return p;
  };
  for (std::size_t i = 0; i < pairing.size(); ++i) {
    int j = pairing[i];
    if (j == int(i)) {
      if (axis == 0) out.vertices[i].x = 0;
      else if (axis == 1) out.vertices[i].y = 0;
      else out.vertices[i].z = 0;
    } else if (int(i) < j) {
      out.vertices[j] = reflect(out.vertices[i]);
    }
  }
  return out;
}

Vec3 face_normal(const Vec3& p1, const Vec3& p2, const Vec3& p3,
                 int face_index) {
  Vec3 c = cross(p2 - p1, p3 - p1);
  double area = norm(c) * 0.5;
  if (area < kEpsArea)
    throw Error("face_normal: degenerate triangle" +
                (face_index >= 0 ? " (face " + std::to_string(face_index) + ")"
                                 : std::string()));
  return c / (2.0 * area);
}

double signed_volume(const Mesh& mesh) {
  double v = 0;
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    v += dot(a, cross(b, c));
  }
  return v / 6.0;
}

Mesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("obj: cannot open " + path);
  Mesh m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x >> p.y >> p.z))
        throw Error("obj: bad vertex at " + path + ":" +
                    std::to_string(lineno));
      m.vertices.push_back(p);
    } else if (tag == "f") {
      std::array<int, 3> f{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        if (!(ss >> tok))
          throw Error("obj: face needs 3 indices at " + path + ":" +
                      std::to_string(lineno));
        f[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      std::string extra;
      if (ss >> extra)
        throw Error("obj: only triangle faces supported, at " + path + ":" +
                    std::to_string(lineno));
      m.faces.push_back(f);
    }
  }
  m.validate();
  return m;
}

void save_obj(const std::string& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error("obj: cannot open for writing " + path);
  out.precision(17);
  for (const auto& v : mesh.vertices)
    out << "v " << v.x << " " << v.y << " " << v.z << "\n";
  for (const auto& f : mesh.faces)
    out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  if (!out) throw Error("obj: write failed for " + path);
}

void save_textures(const std::string& dir, const Mesh& mesh) {
  if (!mesh.has_texture()) throw Error("textures: mesh has no texture");
  int t = mesh.texture[0].size;
  for (int f = 0; f < 6; ++f) {
    ImageU8 img(t, t, 3);
    for (int v = 0; v < t; ++v)
      for (int u = 0; u < t; ++u)
        for (int c = 0; c < 3; ++c)
          img.at(u, v, c) = to_u8(mesh.texture[f].at(u, v, c));
    write_png(dir + "/tex_" + std::to_string(f) + ".png", img);
  }
  nlohmann::json j;
  j["size"] = t;
  j["face_order"] = {"+x", "-x", "+y", "-y", "+z", "-z"};
  std::ofstream out(dir + "/texture.json");
  out << j.dump(2) << "\n";
}

void load_textures(const std::string& dir, Mesh& mesh) {
  std::ifstream in(dir + "/texture.json");
  if (!in) throw Error("textures: cannot open " + dir + "/texture.json");
  nlohmann::json j;
  in >> j;
  int t = j.at("size").get<int>();
  mesh.texture.assign(6, TextureGrid(t));
  for (int f = 0; f < 6; ++f) {
    ImageU8 img = read_png(dir + "/tex_" + std::to_string(f) + ".png");
    if (img.width != t || img.height != t || img.channels < 3)
      throw Error("textures: tex_" + std::to_string(f) +
                  ".png does not match sidecar size");
    for (int v = 0; v < t; ++v)
      for (int u = 0; u < t; ++u)
        for (int c = 0; c < 3; ++c)
          mesh.texture[f].at(u, v, c) = from_u8(img.at(u, v, c));
  }
}

}  // namespace vpl
