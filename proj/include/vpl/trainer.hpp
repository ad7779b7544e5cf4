#pragma once

#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "vpl/data.hpp"
#include "vpl/losses.hpp"
#include "vpl/networks.hpp"

namespace vpl::train {

enum class Mode { kSingleView, kMultiView };
enum class AdvMode { kGradientReversal, kIterative };
enum class DiscMode { kObsVsUnobs, kRealVsFake };

struct TrainConfig {
  Mode mode = Mode::kSingleView;
  bool vpl = false;
  DiscMode discriminator_mode = DiscMode::kObsVsUnobs;
  nn::Conditioning conditioning = nn::Conditioning::kNone;
  bool texture_prediction = false;
  AdvMode adversarial_optimization = AdvMode::kGradientReversal;

  losses::LossWeights weights;
  double lambda_s = 1.0;  // silhouette term weight (0 isolates other losses)
  losses::SilhouetteMode silhouette = losses::SilhouetteMode::kMultiscaleCosine;
  nn::AdamParams optimizer;
  // Fraction of alpha annealed away linearly over the run: step t uses
  // alpha * (1 - lr_decay * t / iterations). 0 keeps a constant rate.
  double lr_decay = 0.0;

  long iterations = 1000;
  std::uint64_t seed = 0;
  int image_size = 64;
  double scale = 0.25;  // network width multiplier
  int batch_size = 2;
  int texture_size = 4;
  bool augment = false;
  // Use view 0 of every object as the single training view instead of
  // drawing designated views at random (for datasets whose first view is
  // sampled from a restricted azimuth band).
  bool designate_first = false;
  double fov_deg = 30;

  std::string dataset;  // directory for run_training
  std::string out_dir;
  std::string resume;  // optional checkpoint to continue from
  long checkpoint_every = 1000;
  long log_every = 10;
  long render_every = 0;  // 0 = final grid only
  bool log_wall_time = true;  // off in reference mode for bit-stable logs

  // Schema-validated parse; unknown keys and wrong types are errors.
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct StepStats {
  double loss_s = 0, loss_c = 0, loss_d = 0;
  double volume_mean = 0;
};

// Owns the models, optimizers and rng streams of one training run.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, data::Dataset dataset);

  // One full optimization step (both passes in iterative mode).
  StepStats step();

  // Gradient accumulation only, no parameter updates; grads stay in params().
  // In iterative mode the adversarial input gradients enter unscaled.
  StepStats accumulate_gradients();

  // Discriminator-only alternation pass on a fresh batch; returns its loss.
  double discriminator_pass();

  void save(const std::string& path);
  void load(const std::string& path);

  // Reconstruct the mesh (and texture) for one input sample; eval mode.
  Mesh reconstruct(const data::ViewSample& sample);

  // Render grid: one row per probe object, observed view + 3 novel views.
  void write_render_grid(const std::string& path, int max_rows = 4);

  long step_index() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  const data::Dataset& dataset() const { return ds_; }

  std::vector<nn::Param*> reconstructor_params();
  std::vector<nn::Param*> discriminator_params();

  // exposed for tests
  nn::Encoder& encoder() { return *enc_; }
  nn::ShapeDecoder& shape_decoder() { return *dec_; }
  nn::Discriminator* discriminator() { return dis_.get(); }

 private:
  struct Batch;
  StepStats run_batch(const Batch& batch, double adv_scale, bool train_disc);
  Batch draw_batch();
  void zero_grads(bool rec, bool disc);

  TrainConfig cfg_;
  data::Dataset ds_;
  std::unique_ptr<nn::Encoder> enc_;
  std::unique_ptr<nn::ShapeDecoder> dec_;
  std::unique_ptr<nn::TextureDecoder> tex_;
  std::unique_ptr<nn::Discriminator> dis_;
  std::unique_ptr<losses::FeatureExtractor> fx_;
  std::unique_ptr<nn::Adam> opt_rec_, opt_dis_;
  CubeTemplate uv_tmpl_;  // textured variant of the decoder template
  Rng rng_batch_, rng_aug_, rng_vpl_;
  long step_ = 0;
};

// Full run: loads the dataset, trains, writes log.csv / ckpt_*.bin /
// step_*.png under cfg.out_dir. Returns the final checkpoint path.
std::string run_training(const TrainConfig& cfg);

}  // namespace vpl::train
