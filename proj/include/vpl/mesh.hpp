#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vpl/common.hpp"

namespace vpl {

// One T x T RGB texel grid, values in [0,1]. Row-major, 3 channels.
struct TextureGrid {
  int size = 0;
  std::vector<double> texels;  // size*size*3

  TextureGrid() = default;
  explicit TextureGrid(int t) : size(t), texels(std::size_t(t) * t * 3, 0.0) {}
  double& at(int u, int v, int c) {
    return texels[(std::size_t(v) * size + u) * 3 + c];
  }
  double at(int u, int v, int c) const {
    return texels[(std::size_t(v) * size + u) * 3 + c];
  }
};

// Per-triangle texture coordinates: which grid, and (u,v) in [0,1] for each
// of the three corners.
struct FaceUV {
  int grid = 0;
  std::array<double, 3> u{}, v{};
};

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;  // CCW winding = outward normal
  std::vector<TextureGrid> texture;       // empty, or exactly 6 grids
  std::vector<FaceUV> face_uv;            // empty, or one per face

  bool has_texture() const { return !texture.empty(); }
  void validate() const;
};

struct Viewpoint {
  double azimuth = 0;    // degrees, normalized to [0,360)
  double elevation = 0;  // degrees, in [-90,90]
  double distance = 1;   // world units, > 0

  static Viewpoint make(double az, double el, double dist);
  bool operator==(const Viewpoint& o) const {
    return azimuth == o.azimuth && elevation == o.elevation &&
           distance == o.distance;
  }
};

// Deformable cube: 6 faces x 16x16 vertex grid, edge vertices shared,
// 1352 global vertices, unit cube centered at the origin.
struct CubeTemplate {
  static constexpr int kGrid = 16;
  static constexpr int kVertexCount = 1352;

  Mesh mesh;
  // grid_index[f][j*16+i] = global vertex index of grid slot (i,j) on face f
  std::array<std::vector<int>, 6> grid_index;
};

CubeTemplate make_cube_template(int texture_size = 0);

// Mirror pairing across an axis plane derived from a reference vertex layout.
// pair_of[i] = j with ref_j = reflect(ref_i); on-plane vertices map to
// themselves. Throws if the layout admits no pairing.
std::vector<int> mirror_pairing(const std::vector<Vec3>& reference, int axis,
                                double tol = 1e-9);

Mesh symmetrize(const Mesh& mesh, int axis);
Mesh symmetrize(const Mesh& mesh, int axis, const std::vector<int>& pairing);

Vec3 face_normal(const Vec3& p1, const Vec3& p2, const Vec3& p3,
                 int face_index = -1);
constexpr double kEpsArea = 1e-12;  // squared units

double signed_volume(const Mesh& mesh);

// OBJ import/export: `v` and `f` records, 1-based indices.
Mesh load_obj(const std::string& path);
void save_obj(const std::string& path, const Mesh& mesh);

// Textures: 6 PNGs tex_{0..5}.png plus a JSON sidecar with T and face order.
void save_textures(const std::string& dir, const Mesh& mesh);
void load_textures(const std::string& dir, Mesh& mesh);

}  // namespace vpl
