#include "vpl/renderer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "vpl/image.hpp"

namespace vpl {

Camera Camera::make(const Viewpoint& vp, double fov_deg, int size) {
  if (fov_deg <= 0 || fov_deg >= 180)
    throw Error("camera: field of view must lie in (0, 180)");
  if (size < 8) throw Error("camera: image size must be >= 8");
  Camera c;
  c.viewpoint = vp;
  c.fov_deg = fov_deg;
  c.size = size;
  double az = deg2rad(vp.azimuth), el = deg2rad(vp.elevation);
  c.eye = Vec3{std::cos(el) * std::sin(az), std::sin(el),
               std::cos(el) * std::cos(az)} *
          vp.distance;
  c.forward = normalized(-c.eye);  // look at the origin
  Vec3 world_up{0, 1, 0};
  Vec3 r = cross(c.forward, world_up);
  if (norm(r) < 1e-9) throw Error("camera: view axis parallel to up vector");
  c.right = normalized(r);
  c.up = cross(c.right, c.forward);
  c.focal_px = (size / 2.0) / std::tan(deg2rad(fov_deg) / 2.0);
  return c;
}

std::vector<ProjectedVertex> project_vertices(const Mesh& mesh,
                                              const Camera& cam) {
  std::vector<ProjectedVertex> out(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    Vec3 q = mesh.vertices[i] - cam.eye;
    double xc = dot(cam.right, q), yc = dot(cam.up, q), zc = dot(cam.forward, q);
    out[i].depth = zc;
    if (zc > kEpsNear) {
      out[i].x = cam.size / 2.0 + cam.focal_px * xc / zc;
      out[i].y = cam.size / 2.0 - cam.focal_px * yc / zc;
    }
  }
  return out;
}

std::array<Vec3, 2> projection_jacobian(const Camera& cam, const Vec3& p) {
  Vec3 q = p - cam.eye;
  double xc = dot(cam.right, q), yc = dot(cam.up, q), zc = dot(cam.forward, q);
  double inv_z2 = 1.0 / (zc * zc);
  Vec3 dx = (cam.right * zc - cam.forward * xc) * (cam.focal_px * inv_z2);
  Vec3 dy = (cam.up * zc - cam.forward * yc) * (-cam.focal_px * inv_z2);
  return {dx, dy};
}

namespace {

inline double edge(double ax, double ay, double bx, double by, double px,
                   double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

inline void sample_texture_bilinear(const TextureGrid& g, double u, double v,
                                    double rgb[3], int idx[4], double w[4]) {
  int t = g.size;
  double s = std::clamp(u, 0.0, 1.0) * (t - 1);
  double r = std::clamp(v, 0.0, 1.0) * (t - 1);
  int i0 = std::min(int(s), t - 2), j0 = std::min(int(r), t - 2);
  if (t == 1) { i0 = 0; j0 = 0; }
  double fu = s - i0, fv = r - j0;
  int i1 = std::min(i0 + 1, t - 1), j1 = std::min(j0 + 1, t - 1);
  idx[0] = j0 * t + i0; w[0] = (1 - fu) * (1 - fv);
  idx[1] = j0 * t + i1; w[1] = fu * (1 - fv);
  idx[2] = j1 * t + i0; w[2] = (1 - fu) * fv;
  idx[3] = j1 * t + i1; w[3] = fu * fv;
  for (int c = 0; c < 3; ++c) {
    rgb[c] = 0;
    for (int k = 0; k < 4; ++k) rgb[c] += w[k] * g.texels[idx[k] * 3 + c];
  }
}

}  // namespace

RenderOutput rasterize(const Mesh& mesh, const Camera& cam,
                       const RasterSettings& settings) {
  const int n = cam.size;
  const int s = settings.supersample;
  RenderOutput out;
  out.size = n;
  out.background = settings.background;
  out.alpha.assign(std::size_t(n) * n, 0.0);
  out.face_id.assign(std::size_t(n) * n, -1);
  out.bary.assign(std::size_t(n) * n * 3, 0.0);
  out.depth.assign(std::size_t(n) * n,
                   std::numeric_limits<double>::infinity());
  out.color.resize(std::size_t(n) * n * 3);
  for (int p = 0; p < n * n; ++p)
    for (int c = 0; c < 3; ++c) out.color[p * 3 + c] = settings.background[c];

  auto proj = project_vertices(mesh, cam);
  std::vector<std::uint32_t> cover(std::size_t(n) * n, 0);  // subsample bits

  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& fc = mesh.faces[f];
    const ProjectedVertex &a = proj[fc[0]], &b = proj[fc[1]], &c = proj[fc[2]];
    if (a.depth <= kEpsNear || b.depth <= kEpsNear || c.depth <= kEpsNear) {
      out.culled_faces.push_back(int(f));
      continue;
    }
    double area = edge(a.x, a.y, b.x, b.y, c.x, c.y);
    if (std::abs(area) < 1e-12) continue;
    double inv_area = 1.0 / area;

    // Tight pixel bounds: every sample position lies strictly inside its
    // pixel square, so pixels outside the vertex hull can never be covered.
    int x0 = std::max(0, int(std::floor(std::min({a.x, b.x, c.x}))));
    int x1 = std::min(n - 1, int(std::floor(std::max({a.x, b.x, c.x}))));
    int y0 = std::max(0, int(std::floor(std::min({a.y, b.y, c.y}))));
    int y1 = std::min(n - 1, int(std::floor(std::max({a.y, b.y, c.y}))));

    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        long p = out.pix(x, y);
        // pixel-center hit for face_id/bary/depth
        double px = x + 0.5, py = y + 0.5;
        double w1 = edge(b.x, b.y, c.x, c.y, px, py) * inv_area;
        double w2 = edge(c.x, c.y, a.x, a.y, px, py) * inv_area;
        double w3 = 1.0 - w1 - w2;
        if (w1 >= 0 && w2 >= 0 && w3 >= 0) {
          double z = w1 * a.depth + w2 * b.depth + w3 * c.depth;
          if (z < out.depth[p]) {
            out.depth[p] = z;
            out.face_id[p] = int(f);
            out.bary[p * 3 + 0] = w1;
            out.bary[p * 3 + 1] = w2;
            out.bary[p * 3 + 2] = w3;
          }
        }
        // coverage subsamples for anti-aliased alpha
        std::uint32_t bits = cover[p];
        const std::uint32_t full =
            (s * s == 32) ? ~0u : ((1u << (s * s)) - 1u);
        if (bits == full) continue;
        for (int sj = 0; sj < s; ++sj)
          for (int si = 0; si < s; ++si) {
            int bit = sj * s + si;
            if (bits & (1u << bit)) continue;
            double sx = x + (si + 0.5) / s, sy = y + (sj + 0.5) / s;
            double u1 = edge(b.x, b.y, c.x, c.y, sx, sy) * inv_area;
            double u2 = edge(c.x, c.y, a.x, a.y, sx, sy) * inv_area;
            double u3 = 1.0 - u1 - u2;
            if (u1 >= 0 && u2 >= 0 && u3 >= 0) bits |= (1u << bit);
          }
        cover[p] = bits;
      }
  }

  const double inv_samples = 1.0 / double(s * s);
  for (long p = 0; p < long(n) * n; ++p)
    out.alpha[p] = double(std::popcount(cover[p])) * inv_samples;

  // shade pixel centers
  for (long p = 0; p < long(n) * n; ++p) {
    int f = out.face_id[p];
    if (f < 0) continue;
    if (mesh.has_texture()) {
      const FaceUV& uv = mesh.face_uv[f];
      double w1 = out.bary[p * 3], w2 = out.bary[p * 3 + 1],
             w3 = out.bary[p * 3 + 2];
      double u = w1 * uv.u[0] + w2 * uv.u[1] + w3 * uv.u[2];
      double v = w1 * uv.v[0] + w2 * uv.v[1] + w3 * uv.v[2];
      double rgb[3];
      int idx[4];
      double w[4];
      sample_texture_bilinear(mesh.texture[uv.grid], u, v, rgb, idx, w);
      for (int c = 0; c < 3; ++c) out.color[p * 3 + c] = rgb[c];
    } else {
      for (int c = 0; c < 3; ++c) out.color[p * 3 + c] = settings.face_color[c];
    }
  }
  return out;
}

namespace {

// RGBA value of a pixel, with out-of-frame neighbors treated as background.
inline void pixel_value(const RenderOutput& out, int x, int y, double v[4]) {
  if (x < 0 || y < 0 || x >= out.size || y >= out.size) {
    v[0] = out.background[0];
    v[1] = out.background[1];
    v[2] = out.background[2];
    v[3] = 0;
    return;
  }
  long p = out.pix(x, y);
  v[0] = out.color[p * 3];
  v[1] = out.color[p * 3 + 1];
  v[2] = out.color[p * 3 + 2];
  v[3] = out.alpha[p];
}

inline void pixel_grad(const RenderOutput& out,
                       const std::vector<double>& grad_color,
                       const std::vector<double>& grad_alpha, int x, int y,
                       double g[4]) {
  if (x < 0 || y < 0 || x >= out.size || y >= out.size) {
    g[0] = g[1] = g[2] = g[3] = 0;
    return;
  }
  long p = out.pix(x, y);
  g[0] = grad_color[p * 3];
  g[1] = grad_color[p * 3 + 1];
  g[2] = grad_color[p * 3 + 2];
  g[3] = grad_alpha[p];
}

inline double dot4(const double a[4], const double b[4]) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
}

// Three-case selection: prev/next are the neighbors along the axis in
// question, cur the pixel itself.
inline double axis_gradient(const double g_cur[4], const double g_prev[4],
                            const double g_next[4], const double p_cur[4],
                            const double p_prev[4], const double p_next[4]) {
  double dpm[4], dmn[4];
  for (int c = 0; c < 4; ++c) {
    dpm[c] = p_prev[c] - p_cur[c];  // p_{i-1} - p_i
    dmn[c] = p_cur[c] - p_next[c];  // p_i - p_{i+1}
  }
  double gp_right = dot4(g_cur, dpm) + dot4(g_next, dmn);
  double gp_left = dot4(g_cur, dmn) + dot4(g_prev, dpm);
  double d_right = -gp_right, d_left = gp_left;
  if (std::max(d_right, d_left) < 0) return 0.0;
  if (d_left < d_right) return gp_right;
  if (d_right < d_left) return gp_left;
  return gp_right;  // tie: right branch
}

}  // namespace

std::vector<std::array<double, 2>> backward_pixels_to_projected(
    const RenderOutput& out, const std::vector<double>& grad_color,
    const std::vector<double>& grad_alpha, const Mesh& mesh) {
  const int n = out.size;
  if (grad_color.size() != std::size_t(n) * n * 3 ||
      grad_alpha.size() != std::size_t(n) * n)
    throw Error("backward_pixels_to_projected: gradient buffer shape mismatch");

  std::vector<std::array<double, 2>> grad(mesh.vertices.size(), {0.0, 0.0});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      long p = out.pix(x, y);
      int f = out.face_id[p];
      if (f < 0) continue;
      double pc[4], pl[4], pr[4], pu[4], pd[4];
      pixel_value(out, x, y, pc);
      pixel_value(out, x - 1, y, pl);
      pixel_value(out, x + 1, y, pr);
      pixel_value(out, x, y - 1, pu);
      pixel_value(out, x, y + 1, pd);
      double gc[4], gl[4], gr[4], gu[4], gd[4];
      pixel_grad(out, grad_color, grad_alpha, x, y, gc);
      pixel_grad(out, grad_color, grad_alpha, x - 1, y, gl);
      pixel_grad(out, grad_color, grad_alpha, x + 1, y, gr);
      pixel_grad(out, grad_color, grad_alpha, x, y - 1, gu);
      pixel_grad(out, grad_color, grad_alpha, x, y + 1, gd);

      double gx = axis_gradient(gc, gl, gr, pc, pl, pr);
      double gy = axis_gradient(gc, gu, gd, pc, pu, pd);
      if (gx == 0.0 && gy == 0.0) continue;
      for (int k = 0; k < 3; ++k) {
        double w = out.bary[p * 3 + k];
        int v = mesh.faces[f][k];
        grad[v][0] += w * gx;
        grad[v][1] += w * gy;
      }
    }
  return grad;
}

std::vector<Vec3> backward_projected_to_vertices(
    const std::vector<std::array<double, 2>>& grad_2d, const Camera& cam,
    const Mesh& mesh) {
  if (grad_2d.size() != mesh.vertices.size())
    throw Error("backward_projected_to_vertices: gradient count mismatch");
  std::vector<Vec3> grad(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    double gx = grad_2d[i][0], gy = grad_2d[i][1];
    if (gx == 0.0 && gy == 0.0) continue;
    Vec3 q = mesh.vertices[i] - cam.eye;
    if (dot(cam.forward, q) <= kEpsNear) continue;  // culled
    auto jac = projection_jacobian(cam, mesh.vertices[i]);
    grad[i] = jac[0] * gx + jac[1] * gy;
  }
  return grad;
}

std::vector<TextureGrid> backward_texture(const RenderOutput& out,
                                          const std::vector<double>& grad_color,
                                          const Mesh& mesh) {
  if (!mesh.has_texture())
    throw Error("backward_texture: mesh has no texture");
  const int n = out.size;
  if (grad_color.size() != std::size_t(n) * n * 3)
    throw Error("backward_texture: gradient buffer shape mismatch");
  std::vector<TextureGrid> grad(6, TextureGrid(mesh.texture[0].size));
  for (long p = 0; p < long(n) * n; ++p) {
    int f = out.face_id[p];
    if (f < 0) continue;
    const FaceUV& uv = mesh.face_uv[f];
    double w1 = out.bary[p * 3], w2 = out.bary[p * 3 + 1],
           w3 = out.bary[p * 3 + 2];
    double u = w1 * uv.u[0] + w2 * uv.u[1] + w3 * uv.u[2];
    double v = w1 * uv.v[0] + w2 * uv.v[1] + w3 * uv.v[2];
    double rgb[3];
    int idx[4];
    double w[4];
    sample_texture_bilinear(mesh.texture[uv.grid], u, v, rgb, idx, w);
    for (int k = 0; k < 4; ++k)
      for (int c = 0; c < 3; ++c)
        grad[uv.grid].texels[idx[k] * 3 + c] += w[k] * grad_color[p * 3 + c];
  }
  return grad;
}

void save_render_png(const std::string& path, const RenderOutput& out,
                     bool with_alpha) {
  int n = out.size;
  ImageU8 img(n, n, with_alpha ? 4 : 3);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      long p = out.pix(x, y);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = to_u8(out.color[p * 3 + c]);
      if (with_alpha) img.at(x, y, 3) = to_u8(out.alpha[p]);
    }
  write_png(path, img);
}

}  // namespace vpl
