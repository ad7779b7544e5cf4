#pragma once

#include <array>
#include <limits>
#include <vector>

#include "vpl/mesh.hpp"

namespace vpl {

constexpr double kEpsNear = 1e-3;  // near-plane cull distance, world units

struct Camera {
  Viewpoint viewpoint;
  double fov_deg = 30;
  int size = 64;  // H = W

  // derived frame
  Vec3 eye, right, up, forward;
  double focal_px = 0;

  static Camera make(const Viewpoint& vp, double fov_deg, int size);
};

struct ProjectedVertex {
  double x = 0, y = 0;  // pixel coords, (0,0) = top-left corner
  double depth = 0;     // distance along the view axis
};

std::vector<ProjectedVertex> project_vertices(const Mesh& mesh,
                                              const Camera& camera);

// d(pixel x, pixel y) / d(world position), rows are x and y.
std::array<Vec3, 2> projection_jacobian(const Camera& camera, const Vec3& p);

struct RasterSettings {
  std::array<double, 3> background{1, 1, 1};
  std::array<double, 3> face_color{0.5, 0.5, 0.5};  // used when untextured
  int supersample = 4;                              // S x S coverage samples
};

struct RenderOutput {
  int size = 0;
  std::vector<double> color;  // H*W*3
  std::vector<double> alpha;  // H*W
  std::vector<int> face_id;   // H*W, -1 = background
  std::vector<double> bary;   // H*W*3
  std::vector<double> depth;  // H*W
  std::array<double, 3> background{1, 1, 1};
  std::vector<int> culled_faces;

  double& color_at(int x, int y, int c) {
    return color[(std::size_t(y) * size + x) * 3 + c];
  }
  double color_at(int x, int y, int c) const {
    return color[(std::size_t(y) * size + x) * 3 + c];
  }
  long pix(int x, int y) const { return long(y) * size + x; }
};

RenderOutput rasterize(const Mesh& mesh, const Camera& camera,
                       const RasterSettings& settings = {});

// Approximate backward pass from per-pixel color/alpha gradients to gradients
// of the projected 2D vertex positions. grad_color is H*W*3, grad_alpha H*W.
std::vector<std::array<double, 2>> backward_pixels_to_projected(
    const RenderOutput& out, const std::vector<double>& grad_color,
    const std::vector<double>& grad_alpha, const Mesh& mesh);

std::vector<Vec3> backward_projected_to_vertices(
    const std::vector<std::array<double, 2>>& grad_2d, const Camera& camera,
    const Mesh& mesh);

// Adjoint of bilinear texture sampling: pixel color gradients -> texel grads.
std::vector<TextureGrid> backward_texture(const RenderOutput& out,
                                          const std::vector<double>& grad_color,
                                          const Mesh& mesh);

void save_render_png(const std::string& path, const RenderOutput& out,
                     bool with_alpha = true);

}  // namespace vpl
