#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vpl/mesh.hpp"
#include "vpl/tensor.hpp"

namespace vpl::data {

// One annotated view of one object.
struct ViewSample {
  Tensor image;       // (3,H,W) RGB in [0,1]
  Tensor silhouette;  // (H,W) in [0,1]
  Viewpoint viewpoint;
  int class_label = 0;
  std::string object_id;
};

struct Object {
  std::string id;
  int class_label = 0;
  std::vector<ViewSample> views;
  std::optional<Mesh> gt_mesh;  // evaluation only, never used for training
  int designated_view = -1;     // the single training view, fixed per run
};

// Immutable after load; every object has exactly n_views views.
struct Dataset {
  std::vector<Object> objects;
  std::vector<std::string> class_names;
  int image_size = 0;
  int n_views = 0;

  // The multiset of all viewpoints in the dataset.
  std::vector<Viewpoint> viewpoints() const;
  void validate() const;
};

// Directory layout: root/objects/<id>/view_<k>.png (RGBA, silhouette in the
// alpha channel) plus root/manifest.json; optional mesh.obj per object.
Dataset load_dataset(const std::string& root);

struct SynthOptions {
  std::uint64_t seed = 0;
  int n_objects = 8;
  int n_views = 20;
  std::vector<std::string> classes{"box", "ellipsoid", "cylinder", "cone",
                                   "lshape"};
  int size = 64;
  double distance = 2.5;
  double fov_deg = 30;
  // View 0 of every object draws its azimuth from this interval; all other
  // views span the full circle. Defaults keep view 0 unconstrained too.
  double first_view_az_min = 0;
  double first_view_az_max = 360;
};

// Writes a fully seeded primitive dataset to out_root (renders + manifest +
// ground-truth meshes) and returns the loaded result.
Dataset synth_primitives(const std::string& out_root, const SynthOptions& opts);

// Random closed primitive mesh, centered, mirror-symmetric about the x axis.
// cls in {box, ellipsoid, cylinder, cone, lshape}.
Mesh make_primitive(const std::string& cls, Rng& rng);

// Probability 1/2 RGB channel reversal; probability 1/2 horizontal mirror
// with azimuth a -> (360 - a) mod 360.
ViewSample augment(const ViewSample& s, Rng& rng);

// Picks the designated training view of every object (uniform).
void assign_designated_views(Dataset& ds, Rng& rng);

std::vector<ViewSample> sample_single_view_batch(const Dataset& ds, int batch,
                                                 Rng& rng);

struct ViewPair {
  ViewSample a, b;
};

// Two distinct views of the same object per element; requires n_views >= 2.
std::vector<ViewPair> sample_multi_view_batch(const Dataset& ds, int batch,
                                              Rng& rng);

// Uniform over the dataset's viewpoint multiset excluding `observed`.
Viewpoint sample_unobserved_viewpoint(const Dataset& ds,
                                      const Viewpoint& observed, Rng& rng);

}  // namespace vpl::data
