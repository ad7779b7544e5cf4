#pragma once

#include <array>
#include <optional>

#include "vpl/mesh.hpp"
#include "vpl/nn.hpp"

#include <nlohmann/json.hpp>

namespace vpl::nn {

// image (N,C,H,W) -> 512-d code
class Encoder {
 public:
  Encoder(int in_channels, int image_size, double scale, Rng& rng);
  Tensor forward(const Tensor& x, bool train) { return seq_.forward(x, train); }
  Tensor backward(const Tensor& g) { return seq_.backward(g); }
  std::vector<Param*> params() { return seq_.params(); }
  std::vector<Param*> state() { return seq_.state(); }

 private:
  Sequential seq_;
};

// 512-d code -> 1352 vertex positions (deformed cube template).
// Six per-face branches; shared edge vertices average both faces' predictions;
// offsets are tanh-bounded and scaled by 0.5.
class ShapeDecoder {
 public:
  ShapeDecoder(double scale, Rng& rng);

  // vertices[i] is the full 1352-vertex array for batch element i
  std::vector<std::vector<Vec3>> forward(const Tensor& latent, bool train);
  Tensor backward(const std::vector<std::vector<Vec3>>& vertex_grads);

  std::vector<Param*> params();
  std::vector<Param*> state();
  const CubeTemplate& cube() const { return tmpl_; }
  Mesh mesh_for(const std::vector<Vec3>& vertices) const;
  Sequential& branch(int f) { return branch_.at(std::size_t(f)); }

 private:
  CubeTemplate tmpl_;
  std::vector<int> slot_count_;  // per global vertex: number of grid slots
  std::array<Sequential, 6> branch_;
  std::array<Tensor, 6> out_cache_;
  int batch_ = 0;
};

// 512-d code -> 6 per-face T x T RGB texture grids in [0,1] (sigmoid output).
class TextureDecoder {
 public:
  TextureDecoder(int texture_size, double scale, Rng& rng);

  std::vector<std::array<TextureGrid, 6>> forward(const Tensor& latent,
                                                  bool train);
  Tensor backward(const std::vector<std::array<TextureGrid, 6>>& texel_grads);

  std::vector<Param*> params();
  std::vector<Param*> state();
  int texture_size() const { return t_; }
  Sequential& branch(int f) { return branch_.at(std::size_t(f)); }

 private:
  int t_;
  std::array<Sequential, 6> branch_;
  int batch_ = 0;
};

enum class Conditioning { kNone, kViewpoint, kViewpointClass };

Conditioning conditioning_from_string(const std::string& s);
std::string to_string(Conditioning c);

// conv stack with leaky-relu; spectral normalization on every conv/linear
// layer; viewpoint tiled and concatenated after the first block; class
// conditioning adds the projection term <embed(y), phi> to the logit.
class Discriminator {
 public:
  Discriminator(int in_channels, int image_size, Conditioning cond,
                int n_classes, bool batchnorm, double scale, Rng& rng);

  // viewpoints: (N,3) = (elevation, azimuth, distance), normalized by caller
  Tensor forward(const Tensor& images, const Tensor& viewpoints,
                 const std::vector<int>& labels, bool train);
  // returns gradient wrt the input images
  Tensor backward(const Tensor& grad_logits);

  std::vector<Param*> params();
  std::vector<Param*> state();
  Conditioning conditioning() const { return cond_; }
  int in_channels() const { return in_ch_; }

  // top singular values of all spectrally normalized weights, estimated with
  // `iters` fresh power iterations on the normalized weights (audit mode)
  std::vector<double> audit_spectral_norms(int iters = 20) const;

 private:
  int in_ch_, feat_dim_ = 0;
  Conditioning cond_;
  Sequential pre_, body_;
  Linear* head_ = nullptr;
  std::unique_ptr<Linear> head_owned_;
  Param embed_, embed_u_, embed_v_;
  Tensor embed_hat_;
  double embed_sigma_ = 1;
  int n_classes_ = 0;

  // caches
  Tensor phi_, x1_, vp_tile_;
  std::vector<int> labels_;
  bool used_vp_ = false;
};

// vector (N,3) from a viewpoint, normalized for conditioning input
Tensor viewpoint_features(const std::vector<Viewpoint>& vps);

// ------------------------------------------------------------- checkpoints
// Single binary file: magic "VPLCKPT1", little-endian u32 JSON header length,
// JSON header (arch/seed/step + ordered block table), then raw little-endian
// float32 blocks in declaration order.
struct CheckpointBlock {
  std::string name;
  Tensor* tensor;
};

// Saving also rounds the live tensors through float32 so that a resumed run
// continues from exactly the stored values.
void save_checkpoint(const std::string& path, nlohmann::json header,
                     const std::vector<CheckpointBlock>& blocks);
nlohmann::json load_checkpoint(const std::string& path,
                               const std::vector<CheckpointBlock>& blocks);
nlohmann::json read_checkpoint_header(const std::string& path);

}  // namespace vpl::nn
