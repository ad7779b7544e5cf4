#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vpl/mesh.hpp"

namespace vpl::metrics {

struct Box {
  Vec3 lo{-1, -1, -1};
  Vec3 hi{1, 1, 1};
};

struct VoxelGrid {
  int r = 0;
  Box box;
  std::vector<std::uint8_t> occ;  // r^3, x fastest

  VoxelGrid() = default;
  VoxelGrid(int res, const Box& b)
      : r(res), box(b), occ(std::size_t(res) * res * res, 0) {}
  std::uint8_t& at(int x, int y, int z) {
    return occ[(std::size_t(z) * r + y) * r + x];
  }
  std::uint8_t at(int x, int y, int z) const {
    return occ[(std::size_t(z) * r + y) * r + x];
  }
  long count() const;
};

// Parity ray casting along +x at every voxel center; rays that graze edges
// or hit an odd number of surfaces retry with a deterministic jitter.
// Persistent parity inconsistency reports the mesh as non-closed.
VoxelGrid voxelize(const Mesh& mesh, int r, const Box& box,
                   const std::string& name = "mesh");

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b);

enum class PointTag { kSurface, kVolume };

struct PointCloud {
  std::vector<Vec3> points;
  PointTag tag = PointTag::kSurface;
};

// area-weighted face choice, uniform barycentric placement
PointCloud sample_surface(const Mesh& mesh, int n, std::uint64_t seed);

// rejection sampling against a high-resolution voxelization
PointCloud sample_volume(const Mesh& mesh, int n, std::uint64_t seed,
                         const Box& box = {}, int grid_r = 64);

// symmetric sum of mean squared nearest distances; exact at every size
// (brute force to 2048 points, grid-accelerated exact search beyond)
double chamfer_distance(const PointCloud& a, const PointCloud& b);

// exact minimum-cost perfect matching, mean Euclidean cost; n <= 512
double emd(const PointCloud& a, const PointCloud& b);

struct EvalSample {
  Mesh pred, gt;
  std::string cls;
  std::string id;
};

struct EvalOptions {
  int voxel_r = 32;
  int n_surface = 512;
  int n_volume = 512;
  std::uint64_t seed = 0;
  bool per_sample_mean = false;  // `all` row averages samples, not classes
};

struct EvalRow {
  std::string cls;
  double iou = 0, cd_s = 0, cd_v = 0, emd_s = 0, emd_v = 0;
  int n = 0;
};

// per-class rows plus a final `all` row; cd columns reported x100
std::vector<EvalRow> evaluate_meshes(const std::vector<EvalSample>& samples,
                                     const EvalOptions& opts);

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows);

}  // namespace vpl::metrics
