#pragma once

#include <string>
#include <vector>

#include "vpl/renderer.hpp"

namespace vpl::checks {

struct CheckResult {
  std::string name;
  double max_err = 0;
  double tol = 0;
  bool pass = false;
};

// Straight-line reference implementation of the approximate pixel-to-vertex
// backward rule, written directly from the per-pixel case analysis and kept
// independent of the production code path.
std::vector<std::array<double, 2>> oracle_backward_pixels(
    const RenderOutput& out, const std::vector<double>& grad_color,
    const std::vector<double>& grad_alpha, const Mesh& mesh);

struct RandomScene {
  Mesh mesh;
  Camera camera;
  RasterSettings settings;
};

// Seeded scene generator for backward-oracle comparisons: image size <= 16,
// up to 6 faces.
RandomScene random_scene(Rng& rng);

// Check suites. `corrupt` deliberately breaks one backward pass and is used
// as a negative control.
std::vector<CheckResult> run_renderer_checks(std::uint64_t seed,
                                             int oracle_scenes = 200);
std::vector<CheckResult> run_nn_checks(std::uint64_t seed, int fd_seeds = 100,
                                       bool corrupt = false);
std::vector<CheckResult> run_losses_checks(std::uint64_t seed,
                                           int fd_seeds = 100);

bool all_pass(const std::vector<CheckResult>& results);

}  // namespace vpl::checks
