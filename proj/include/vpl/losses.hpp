#pragma once

#include "vpl/mesh.hpp"
#include "vpl/networks.hpp"
#include "vpl/tensor.hpp"

namespace vpl::losses {

struct LossWeights {
  double lambda_c = 0.5;   // perceptual
  double lambda_d = 0.2;   // view discrimination (gradient reversal scale)
  double lambda_p = 1e-4;  // internal pressure
  int n_s = 5;             // silhouette pyramid depth
};

enum class SilhouetteMode { kMultiscaleCosine, kNegIou };

SilhouetteMode silhouette_mode_from_string(const std::string& s);

struct ImageLoss {
  double value = 0;
  Tensor grad;  // wrt the predicted image
};

// Sum over pyramid levels of (1 - cosine similarity); level i is the input
// average-pooled 2x2 i-1 times. A zero-norm level contributes loss 1 with
// zero gradient.
ImageLoss multiscale_cosine_silhouette(const Tensor& target,
                                       const Tensor& pred, int n_s);

// 1 - |t*p| / |t + p - t*p|; two all-zero images give loss 0.
ImageLoss neg_iou_silhouette(const Tensor& target, const Tensor& pred);

// Frozen seeded conv stack; taps are the raw conv outputs. Stands in for a
// pretrained classification network (no external weight files).
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed, int in_channels = 3,
                            bool linear = false);

  int taps() const { return int(convs_.size()); }
  // x: (C,H,W), H and W divisible by 4; returns one map per conv layer
  std::vector<Tensor> features(const Tensor& x);
  // grad wrt x for per-tap upstream gradients; uses the last features() call
  Tensor backward(const std::vector<Tensor>& tap_grads);

 private:
  std::vector<nn::LayerPtr> convs_, acts_;
  bool linear_;
};

// Feature-space distance of Eq-style normalized maps:
// sum_m (1/D_m) | F_m(pred)/|F_m(pred)| - F_m(target)/|F_m(target)| |^2.
// Zero-norm maps contribute 0 with zero gradient.
ImageLoss perceptual_color(const Tensor& target, const Tensor& pred,
                           FeatureExtractor& fx);

struct PressureGrads {
  std::vector<Vec3> grad;  // dL_p/dp_i; descent along -grad inflates
  int skipped_faces = 0;
};

// Each face with unit outward normal n contributes -n to each of its three
// vertices. Defined by its gradient only; no scalar value exists.
PressureGrads internal_pressure_grads(const Mesh& mesh);

struct ViewPair {
  Tensor target_alpha, pred_alpha;  // (H,W)
  Tensor target_color, pred_color;  // (3,H,W); may be empty when lambda_c = 0
};

struct ReconLoss {
  double total = 0, silhouette = 0, perceptual = 0;
  std::vector<Tensor> grad_alpha, grad_color;  // per pair, wrt predictions
};

ReconLoss reconstruction_loss(const std::vector<ViewPair>& pairs,
                              double lambda_c, SilhouetteMode mode, int n_s,
                              FeatureExtractor* fx);

struct DiscLoss {
  double value = 0;
  Tensor grad_obs, grad_unobs;  // wrt discriminator input images
};

// Batch mean of -log Dis(obs, v_obs) - log(1 - Dis(unobs, v_unobs)).
// Discriminator parameter gradients accumulate +dL; the reconstructor side
// applies the reversal scale (-lambda_d) to grad_obs/grad_unobs.
DiscLoss view_discrimination_loss(nn::Discriminator& dis,
                                  const Tensor& obs_images,
                                  const Tensor& obs_vps,
                                  const Tensor& unobs_images,
                                  const Tensor& unobs_vps,
                                  const std::vector<int>& labels, bool train);

// Exact per-object estimator: the unobserved term averages over every
// viewpoint in the set except the observed one (divides by |V| - 1).
// Value only; used by tests and evaluation.
double view_discrimination_loss_exact(
    nn::Discriminator& dis, const Tensor& obs_images, const Tensor& obs_vps,
    const std::vector<Tensor>& unobs_images_per_view,
    const std::vector<Tensor>& unobs_vps_per_view,
    const std::vector<int>& labels);

// Ablation mode: classes are {reconstructed, dataset} instead of
// {observed view, unobserved view}.
DiscLoss real_vs_fake_discrimination_loss(nn::Discriminator& dis,
                                          const Tensor& fake_images,
                                          const Tensor& real_images,
                                          const Tensor& vps,
                                          const std::vector<int>& labels,
                                          bool train);

}  // namespace vpl::losses
