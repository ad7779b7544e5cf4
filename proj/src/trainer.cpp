#include "vpl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vpl/image.hpp"
#include "vpl/metrics.hpp"
#include "vpl/renderer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vpl::train {

// ----------------------------------------------------------------- config

namespace {

Mode mode_from_string(const std::string& s) {
  if (s == "single_view") return Mode::kSingleView;
  if (s == "multi_view") return Mode::kMultiView;
  throw Error("config: unknown mode '" + s + "'");
}

AdvMode adv_from_string(const std::string& s) {
  if (s == "gradient_reversal") return AdvMode::kGradientReversal;
  if (s == "iterative") return AdvMode::kIterative;
  throw Error("config: unknown adversarial_optimization '" + s + "'");
}

DiscMode disc_from_string(const std::string& s) {
  if (s == "obs_vs_unobs") return DiscMode::kObsVsUnobs;
  if (s == "real_vs_fake") return DiscMode::kRealVsFake;
  throw Error("config: unknown discriminator_mode '" + s + "'");
}

std::string to_string(Mode m) {
  return m == Mode::kSingleView ? "single_view" : "multi_view";
}
std::string to_string(AdvMode m) {
  return m == AdvMode::kGradientReversal ? "gradient_reversal" : "iterative";
}
std::string to_string(DiscMode m) {
  return m == DiscMode::kObsVsUnobs ? "obs_vs_unobs" : "real_vs_fake";
}
std::string to_string(losses::SilhouetteMode m) {
  return m == losses::SilhouetteMode::kMultiscaleCosine ? "multiscale_cosine"
                                                        : "neg_iou";
}

void require_keys(const json& j, const std::vector<std::string>& allowed,
                  const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || key == a;
    if (!ok) throw Error("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error("config: bad value for '" + std::string(key) + "': " +
                e.what());
  }
}

void get_enum(const json& j, const char* key, std::string& out) {
  if (j.contains(key)) {
    if (!j.at(key).is_string())
      throw Error("config: '" + std::string(key) + "' must be a string");
    out = j.at(key).get<std::string>();
  }
}

bool power_of_two_i(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  require_keys(
      j,
      {"mode", "vpl", "discriminator_mode", "conditioning",
       "texture_prediction", "adversarial_optimization", "weights", "lambda_s",
       "silhouette_loss", "optimizer", "lr_decay", "iterations", "seed",
       "image_size",
       "scale", "batch_size", "texture_size", "augment", "designate_first",
       "fov_deg", "dataset",
       "out_dir", "resume", "checkpoint_every", "log_every", "render_every",
       "log_wall_time"},
      "config root");
  std::string s;
  s = to_string(c.mode);
  get_enum(j, "mode", s);
  c.mode = mode_from_string(s);
  get_if(j, "vpl", c.vpl);
  s = to_string(c.discriminator_mode);
  get_enum(j, "discriminator_mode", s);
  c.discriminator_mode = disc_from_string(s);
  s = nn::to_string(c.conditioning);
  get_enum(j, "conditioning", s);
  c.conditioning = nn::conditioning_from_string(s);
  get_if(j, "texture_prediction", c.texture_prediction);
  s = to_string(c.adversarial_optimization);
  get_enum(j, "adversarial_optimization", s);
  c.adversarial_optimization = adv_from_string(s);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    require_keys(w, {"lambda_c", "lambda_d", "lambda_p", "n_s"}, "weights");
    get_if(w, "lambda_c", c.weights.lambda_c);
    get_if(w, "lambda_d", c.weights.lambda_d);
    get_if(w, "lambda_p", c.weights.lambda_p);
    get_if(w, "n_s", c.weights.n_s);
  }
  get_if(j, "lambda_s", c.lambda_s);
  s = to_string(c.silhouette);
  get_enum(j, "silhouette_loss", s);
  c.silhouette = losses::silhouette_mode_from_string(s);
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    require_keys(o, {"alpha", "beta1", "beta2", "eps"}, "optimizer");
    get_if(o, "alpha", c.optimizer.alpha);
    get_if(o, "beta1", c.optimizer.beta1);
    get_if(o, "beta2", c.optimizer.beta2);
    get_if(o, "eps", c.optimizer.eps);
  }
  get_if(j, "lr_decay", c.lr_decay);
  get_if(j, "iterations", c.iterations);
  get_if(j, "seed", c.seed);
  get_if(j, "image_size", c.image_size);
  get_if(j, "scale", c.scale);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "texture_size", c.texture_size);
  get_if(j, "augment", c.augment);
  get_if(j, "designate_first", c.designate_first);
  get_if(j, "fov_deg", c.fov_deg);
  get_if(j, "dataset", c.dataset);
  get_if(j, "out_dir", c.out_dir);
  get_if(j, "resume", c.resume);
  get_if(j, "checkpoint_every", c.checkpoint_every);
  get_if(j, "log_every", c.log_every);
  get_if(j, "render_every", c.render_every);
  get_if(j, "log_wall_time", c.log_wall_time);

  if (!power_of_two_i(c.image_size) || c.image_size < 16)
    throw Error("config: image_size must be a power of two >= 16");
  if (c.batch_size < 1) throw Error("config: batch_size must be >= 1");
  if (c.iterations < 0) throw Error("config: iterations must be >= 0");
  if (c.scale <= 0) throw Error("config: scale must be > 0");
  if (c.weights.lambda_d < 0) throw Error("config: lambda_d must be >= 0");
  if (c.weights.n_s < 1) throw Error("config: n_s must be >= 1");
  if (c.lambda_s < 0) throw Error("config: lambda_s must be >= 0");
  if (c.lr_decay < 0 || c.lr_decay > 1)
    throw Error("config: lr_decay must be in [0, 1]");
  return c;
}

json TrainConfig::to_json() const {
  json j;
  j["mode"] = to_string(mode);
  j["vpl"] = vpl;
  j["discriminator_mode"] = to_string(discriminator_mode);
  j["conditioning"] = nn::to_string(conditioning);
  j["texture_prediction"] = texture_prediction;
  j["adversarial_optimization"] = to_string(adversarial_optimization);
  j["weights"] = {{"lambda_c", weights.lambda_c},
                  {"lambda_d", weights.lambda_d},
                  {"lambda_p", weights.lambda_p},
                  {"n_s", weights.n_s}};
  j["lambda_s"] = lambda_s;
  j["silhouette_loss"] = to_string(silhouette);
  j["optimizer"] = {{"alpha", optimizer.alpha},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"eps", optimizer.eps}};
  j["lr_decay"] = lr_decay;
  j["iterations"] = iterations;
  j["seed"] = seed;
  j["image_size"] = image_size;
  j["scale"] = scale;
  j["batch_size"] = batch_size;
  j["texture_size"] = texture_size;
  j["augment"] = augment;
  j["designate_first"] = designate_first;
  j["fov_deg"] = fov_deg;
  j["dataset"] = dataset;
  j["out_dir"] = out_dir;
  j["resume"] = resume;
  j["checkpoint_every"] = checkpoint_every;
  j["log_every"] = log_every;
  j["render_every"] = render_every;
  j["log_wall_time"] = log_wall_time;
  return j;
}

// ---------------------------------------------------------------- trainer

struct Trainer::Batch {
  std::vector<data::ViewSample> inputs;  // one per reconstruction
  // per reconstruction: target views; element 0 is the input's own view
  std::vector<std::vector<data::ViewSample>> targets;
};

Trainer::Trainer(const TrainConfig& cfg, data::Dataset dataset)
    : cfg_(cfg),
      ds_(std::move(dataset)),
      rng_batch_(0),
      rng_aug_(0),
      rng_vpl_(0) {
  Rng root(cfg_.seed);
  Rng r_designate = root.fork(1);
  Rng r_enc = root.fork(2), r_dec = root.fork(3), r_tex = root.fork(4);
  Rng r_dis = root.fork(5);
  rng_batch_ = root.fork(6);
  rng_aug_ = root.fork(7);
  rng_vpl_ = root.fork(8);

  if (ds_.image_size != cfg_.image_size)
    throw Error("trainer: dataset image size " +
                std::to_string(ds_.image_size) + " != config image_size " +
                std::to_string(cfg_.image_size));
  if (cfg_.designate_first)
    for (auto& obj : ds_.objects) obj.designated_view = 0;
  else
    data::assign_designated_views(ds_, r_designate);

  enc_ = std::make_unique<nn::Encoder>(4, cfg_.image_size, cfg_.scale, r_enc);
  dec_ = std::make_unique<nn::ShapeDecoder>(cfg_.scale, r_dec);
  if (cfg_.texture_prediction) {
    tex_ = std::make_unique<nn::TextureDecoder>(cfg_.texture_size, cfg_.scale,
                                                r_tex);
    uv_tmpl_ = make_cube_template(cfg_.texture_size);
    fx_ = std::make_unique<losses::FeatureExtractor>(root.fork(9).next_u64(),
                                                     3);
  }
  if (cfg_.vpl) {
    const int disc_ch = cfg_.texture_prediction ? 4 : 1;
    dis_ = std::make_unique<nn::Discriminator>(
        disc_ch, cfg_.image_size, cfg_.conditioning,
        int(ds_.class_names.size()), /*batchnorm=*/false, cfg_.scale, r_dis);
    opt_dis_ = std::make_unique<nn::Adam>(dis_->params(), cfg_.optimizer);
  }
  opt_rec_ = std::make_unique<nn::Adam>(reconstructor_params(),
                                        cfg_.optimizer);
}

std::vector<nn::Param*> Trainer::reconstructor_params() {
  std::vector<nn::Param*> ps = enc_->params();
  for (auto* p : dec_->params()) ps.push_back(p);
  if (tex_)
    for (auto* p : tex_->params()) ps.push_back(p);
  return ps;
}

std::vector<nn::Param*> Trainer::discriminator_params() {
  return dis_ ? dis_->params() : std::vector<nn::Param*>{};
}

void Trainer::zero_grads(bool rec, bool disc) {
  if (rec)
    for (auto* p : reconstructor_params()) p->zero_grad();
  if (disc && dis_)
    for (auto* p : dis_->params()) p->zero_grad();
}

Trainer::Batch Trainer::draw_batch() {
  Batch b;
  if (cfg_.mode == Mode::kSingleView) {
    auto samples = data::sample_single_view_batch(ds_, cfg_.batch_size,
                                                  rng_batch_);
    for (auto& s : samples) {
      data::ViewSample in = cfg_.augment ? data::augment(s, rng_aug_) : s;
      b.inputs.push_back(in);
      b.targets.push_back({in});
    }
  } else {
    auto pairs = data::sample_multi_view_batch(ds_, cfg_.batch_size,
                                               rng_batch_);
    for (auto& p : pairs) {
      data::ViewSample a = p.a, bb = p.b;
      if (cfg_.augment) {
        // one augmentation decision per pair so both views stay consistent
        Rng r1 = rng_aug_.fork(rng_aug_.next_u64());
        Rng r2 = r1;
        a = data::augment(a, r1);
        bb = data::augment(bb, r2);
      }
      b.inputs.push_back(a);
      b.targets.push_back({a, bb});
      b.inputs.push_back(bb);
      b.targets.push_back({bb, a});
    }
  }
  return b;
}

namespace {

struct RenderTask {
  int input = 0;  // reconstruction index
  enum Kind { kObs, kExtra, kUnobs } kind = kObs;
  int target = -1;  // index into batch.targets[input], -1 for unobs
  Viewpoint vp;
  Camera cam;
  RenderOutput out;
  std::vector<double> gcol, galpha;  // per-pixel gradient accumulators
  bool has_grad = false;
};

// planar (3,H,W) tensor from interleaved render color
Tensor planar_color(const RenderOutput& out) {
  const int s = out.size;
  Tensor t({3, s, s});
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c)
        t.data[(std::size_t(c) * s + y) * s + x] = out.color_at(x, y, c);
  return t;
}

}  // namespace

StepStats Trainer::run_batch(const Batch& batch, double adv_scale,
                             bool train_disc) {
  const int B = int(batch.inputs.size());
  const int H = cfg_.image_size;
  const long np = long(H) * H;

  // encode + decode
  Tensor x({B, 4, H, H});
  for (int b = 0; b < B; ++b) {
    const auto& s = batch.inputs[std::size_t(b)];
    std::copy(s.image.data.begin(), s.image.data.end(),
              x.data.begin() + long(b) * 4 * np);
    std::copy(s.silhouette.data.begin(), s.silhouette.data.end(),
              x.data.begin() + long(b) * 4 * np + 3 * np);
  }
  Tensor latent = enc_->forward(x, true);
  auto verts = dec_->forward(latent, true);
  std::vector<std::array<TextureGrid, 6>> textures;
  if (tex_) textures = tex_->forward(latent, true);

  std::vector<Mesh> meshes;
  for (int b = 0; b < B; ++b) {
    Mesh m;
    if (tex_) {
      m = uv_tmpl_.mesh;
      m.vertices = verts[std::size_t(b)];
      m.texture.assign(textures[std::size_t(b)].begin(),
                       textures[std::size_t(b)].end());
    } else {
      m = dec_->mesh_for(verts[std::size_t(b)]);
    }
    meshes.push_back(std::move(m));
  }

  // render tasks
  std::vector<RenderTask> tasks;
  const bool need_unobs =
      cfg_.vpl && cfg_.discriminator_mode == DiscMode::kObsVsUnobs;
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < int(batch.targets[std::size_t(b)].size()); ++t) {
      RenderTask task;
      task.input = b;
      task.kind = t == 0 ? RenderTask::kObs : RenderTask::kExtra;
      task.target = t;
      task.vp = batch.targets[std::size_t(b)][std::size_t(t)].viewpoint;
      tasks.push_back(std::move(task));
    }
    if (need_unobs) {
      RenderTask task;
      task.input = b;
      task.kind = RenderTask::kUnobs;
      task.vp = data::sample_unobserved_viewpoint(
          ds_, batch.inputs[std::size_t(b)].viewpoint, rng_vpl_);
      tasks.push_back(std::move(task));
    }
  }
  RasterSettings rs;
  for (auto& task : tasks) {
    task.cam = Camera::make(task.vp, cfg_.fov_deg, H);
    task.out = rasterize(meshes[std::size_t(task.input)], task.cam, rs);
    task.gcol.assign(std::size_t(np) * 3, 0.0);
    task.galpha.assign(std::size_t(np), 0.0);
  }

  StepStats stats;

  // reconstruction losses
  const double lambda_c = tex_ ? cfg_.weights.lambda_c : 0.0;
  if (cfg_.lambda_s > 0 || lambda_c > 0) {
    std::vector<losses::ViewPair> pairs;
    std::vector<RenderTask*> pair_task;
    for (auto& task : tasks) {
      if (task.target < 0) continue;
      const auto& tgt =
          batch.targets[std::size_t(task.input)][std::size_t(task.target)];
      losses::ViewPair p;
      p.target_alpha = tgt.silhouette;
      p.pred_alpha = Tensor({H, H}, task.out.alpha);
      if (lambda_c > 0) {
        p.target_color = tgt.image;
        p.pred_color = planar_color(task.out);
      }
      pairs.push_back(std::move(p));
      pair_task.push_back(&task);
    }
    losses::ReconLoss rl = losses::reconstruction_loss(
        pairs, lambda_c, cfg_.silhouette, cfg_.weights.n_s, fx_.get());
    stats.loss_s = cfg_.lambda_s * rl.silhouette / B;
    stats.loss_c = lambda_c * rl.perceptual / B;
    for (std::size_t i = 0; i < pair_task.size(); ++i) {
      RenderTask& task = *pair_task[i];
      if (cfg_.lambda_s > 0) {
        const double w = cfg_.lambda_s / B;
        for (long k = 0; k < np; ++k)
          task.galpha[std::size_t(k)] +=
              w * rl.grad_alpha[i].data[std::size_t(k)];
        task.has_grad = true;
      }
      if (lambda_c > 0) {
        // grad_color is planar (3,H,W), already scaled by lambda_c
        for (int c = 0; c < 3; ++c)
          for (long k = 0; k < np; ++k)
            task.gcol[std::size_t(k) * 3 + std::size_t(c)] +=
                rl.grad_color[i].data[std::size_t(c) * np + k] / B;
        task.has_grad = true;
      }
    }
  }

  // adversarial losses
  if (cfg_.vpl) {
    const int dc = dis_->in_channels();
    auto disc_image = [&](const RenderTask& task, Tensor& dst, int n) {
      if (dc == 1) {
        std::copy(task.out.alpha.begin(), task.out.alpha.end(),
                  dst.data.begin() + long(n) * dc * np);
      } else {
        Tensor pc = planar_color(task.out);
        std::copy(pc.data.begin(), pc.data.end(),
                  dst.data.begin() + long(n) * dc * np);
        std::copy(task.out.alpha.begin(), task.out.alpha.end(),
                  dst.data.begin() + long(n) * dc * np + 3 * np);
      }
    };
    auto add_input_grad = [&](RenderTask& task, const Tensor& g, int n,
                              double scale) {
      if (scale == 0) return;
      const double* base = g.data.data() + long(n) * dc * np;
      if (dc == 1) {
        for (long k = 0; k < np; ++k)
          task.galpha[std::size_t(k)] += scale * base[k];
      } else {
        for (int c = 0; c < 3; ++c)
          for (long k = 0; k < np; ++k)
            task.gcol[std::size_t(k) * 3 + std::size_t(c)] +=
                scale * base[long(c) * np + k];
        for (long k = 0; k < np; ++k)
          task.galpha[std::size_t(k)] += scale * base[3 * np + k];
      }
      task.has_grad = true;
    };

    std::vector<RenderTask*> obs_tasks, unobs_tasks;
    for (auto& task : tasks) {
      if (task.kind == RenderTask::kObs) obs_tasks.push_back(&task);
      if (task.kind == RenderTask::kUnobs) unobs_tasks.push_back(&task);
    }
    const int n = int(obs_tasks.size());
    std::vector<int> labels;
    std::vector<Viewpoint> obs_vps;
    for (auto* task : obs_tasks) {
      labels.push_back(batch.inputs[std::size_t(task->input)].class_label);
      obs_vps.push_back(task->vp);
    }
    Tensor obs_imgs({n, dc, H, H});
    for (int i = 0; i < n; ++i) disc_image(*obs_tasks[std::size_t(i)],
                                           obs_imgs, i);

    losses::DiscLoss dl;
    if (cfg_.discriminator_mode == DiscMode::kObsVsUnobs) {
      std::vector<Viewpoint> unobs_vps;
      for (auto* task : unobs_tasks) unobs_vps.push_back(task->vp);
      Tensor unobs_imgs({n, dc, H, H});
      for (int i = 0; i < n; ++i)
        disc_image(*unobs_tasks[std::size_t(i)], unobs_imgs, i);
      dl = losses::view_discrimination_loss(
          *dis_, obs_imgs, nn::viewpoint_features(obs_vps), unobs_imgs,
          nn::viewpoint_features(unobs_vps), labels, true);
      for (int i = 0; i < n; ++i) {
        add_input_grad(*obs_tasks[std::size_t(i)], dl.grad_obs, i,
                       -adv_scale);
        add_input_grad(*unobs_tasks[std::size_t(i)], dl.grad_unobs, i,
                       -adv_scale);
      }
    } else {
      // real_vs_fake: real = dataset view, fake = the observed-view render
      Tensor real_imgs({n, dc, H, H});
      for (int i = 0; i < n; ++i) {
        const auto& s = batch.inputs[std::size_t(obs_tasks[std::size_t(i)]
                                                     ->input)];
        if (dc == 1) {
          std::copy(s.silhouette.data.begin(), s.silhouette.data.end(),
                    real_imgs.data.begin() + long(i) * dc * np);
        } else {
          std::copy(s.image.data.begin(), s.image.data.end(),
                    real_imgs.data.begin() + long(i) * dc * np);
          std::copy(s.silhouette.data.begin(), s.silhouette.data.end(),
                    real_imgs.data.begin() + long(i) * dc * np + 3 * np);
        }
      }
      dl = losses::real_vs_fake_discrimination_loss(
          *dis_, obs_imgs, real_imgs, nn::viewpoint_features(obs_vps), labels,
          true);
      for (int i = 0; i < n; ++i)
        add_input_grad(*obs_tasks[std::size_t(i)], dl.grad_unobs, i,
                       -adv_scale);
    }
    stats.loss_d = dl.value;
    if (!train_disc) zero_grads(false, true);
  }

  // renderer backward + internal pressure
  std::vector<std::vector<Vec3>> vgrads(
      std::size_t(B), std::vector<Vec3>(verts[0].size(), Vec3{}));
  std::vector<std::array<TextureGrid, 6>> tgrads;
  if (tex_) {
    std::array<TextureGrid, 6> zero;
    zero.fill(TextureGrid(cfg_.texture_size));
    tgrads.assign(std::size_t(B), zero);
  }
  for (auto& task : tasks) {
    if (!task.has_grad) continue;
    const Mesh& mesh = meshes[std::size_t(task.input)];
    auto g2d = backward_pixels_to_projected(task.out, task.gcol, task.galpha,
                                            mesh);
    auto g3d = backward_projected_to_vertices(g2d, task.cam, mesh);
    auto& vg = vgrads[std::size_t(task.input)];
    for (std::size_t v = 0; v < vg.size(); ++v) vg[v] += g3d[v];
    if (tex_) {
      bool any_color = false;
      for (double g : task.gcol)
        if (g != 0) {
          any_color = true;
          break;
        }
      if (any_color) {
        auto tg = backward_texture(task.out, task.gcol, mesh);
        auto& acc = tgrads[std::size_t(task.input)];
        for (int f = 0; f < 6; ++f)
          for (std::size_t k = 0; k < tg[std::size_t(f)].texels.size(); ++k)
            acc[std::size_t(f)].texels[k] += tg[std::size_t(f)].texels[k];
      }
    }
  }
  double vol = 0;
  for (int b = 0; b < B; ++b) {
    const Mesh& mesh = meshes[std::size_t(b)];
    vol += signed_volume(mesh);
    if (cfg_.weights.lambda_p > 0) {
      auto ip = losses::internal_pressure_grads(mesh);
      auto& vg = vgrads[std::size_t(b)];
      const double w = cfg_.weights.lambda_p / B;
      for (std::size_t v = 0; v < vg.size(); ++v) vg[v] += ip.grad[v] * w;
    }
  }
  stats.volume_mean = vol / B;

  Tensor glatent = dec_->backward(vgrads);
  if (tex_) {
    Tensor g2 = tex_->backward(tgrads);
    for (long i = 0; i < glatent.numel(); ++i) glatent.data[std::size_t(i)] +=
        g2.data[std::size_t(i)];
  }
  enc_->backward(glatent);

  if (!std::isfinite(stats.loss_s) || !std::isfinite(stats.loss_c) ||
      !std::isfinite(stats.loss_d) || !std::isfinite(stats.volume_mean))
    throw NumericalError(
        "train: non-finite loss at step " + std::to_string(step_ + 1) +
                " (L_s=" + std::to_string(stats.loss_s) +
                ", L_c=" + std::to_string(stats.loss_c) +
                ", L_d=" + std::to_string(stats.loss_d) +
                ", volume=" + std::to_string(stats.volume_mean) + ")");
  return stats;
}

StepStats Trainer::accumulate_gradients() {
  zero_grads(true, true);
  const bool reversal =
      cfg_.adversarial_optimization == AdvMode::kGradientReversal;
  const double adv_scale =
      cfg_.vpl ? (reversal ? cfg_.weights.lambda_d : 1.0) : 0.0;
  return run_batch(draw_batch(), adv_scale, reversal);
}

double Trainer::discriminator_pass() {
  if (!dis_) throw Error("discriminator_pass: vpl is off");
  zero_grads(false, true);
  Batch batch = draw_batch();
  const int B = int(batch.inputs.size());
  const int H = cfg_.image_size;
  const long np = long(H) * H;

  // reconstruct in eval mode; the reconstructor is read-only in this pass
  Tensor x({B, 4, H, H});
  for (int b = 0; b < B; ++b) {
    const auto& s = batch.inputs[std::size_t(b)];
    std::copy(s.image.data.begin(), s.image.data.end(),
              x.data.begin() + long(b) * 4 * np);
    std::copy(s.silhouette.data.begin(), s.silhouette.data.end(),
              x.data.begin() + long(b) * 4 * np + 3 * np);
  }
  Tensor latent = enc_->forward(x, false);
  auto verts = dec_->forward(latent, false);
  std::vector<std::array<TextureGrid, 6>> textures;
  if (tex_) textures = tex_->forward(latent, false);

  const int dc = dis_->in_channels();
  auto fill_image = [&](const RenderOutput& out, Tensor& dst, int n) {
    if (dc == 1) {
      std::copy(out.alpha.begin(), out.alpha.end(),
                dst.data.begin() + long(n) * dc * np);
    } else {
      Tensor pc = planar_color(out);
      std::copy(pc.data.begin(), pc.data.end(),
                dst.data.begin() + long(n) * dc * np);
      std::copy(out.alpha.begin(), out.alpha.end(),
                dst.data.begin() + long(n) * dc * np + 3 * np);
    }
  };

  RasterSettings rs;
  Tensor obs_imgs({B, dc, H, H});
  std::vector<Viewpoint> obs_vps;
  std::vector<int> labels;
  std::vector<Mesh> meshes;
  for (int b = 0; b < B; ++b) {
    Mesh m;
    if (tex_) {
      m = uv_tmpl_.mesh;
      m.vertices = verts[std::size_t(b)];
      m.texture.assign(textures[std::size_t(b)].begin(),
                       textures[std::size_t(b)].end());
    } else {
      m = dec_->mesh_for(verts[std::size_t(b)]);
    }
    const Viewpoint vp = batch.inputs[std::size_t(b)].viewpoint;
    fill_image(rasterize(m, Camera::make(vp, cfg_.fov_deg, H), rs), obs_imgs,
               b);
    obs_vps.push_back(vp);
    labels.push_back(batch.inputs[std::size_t(b)].class_label);
    meshes.push_back(std::move(m));
  }

  losses::DiscLoss dl;
  if (cfg_.discriminator_mode == DiscMode::kObsVsUnobs) {
    Tensor unobs_imgs({B, dc, H, H});
    std::vector<Viewpoint> unobs_vps;
    for (int b = 0; b < B; ++b) {
      const Viewpoint vp = data::sample_unobserved_viewpoint(
          ds_, batch.inputs[std::size_t(b)].viewpoint, rng_vpl_);
      fill_image(rasterize(meshes[std::size_t(b)],
                           Camera::make(vp, cfg_.fov_deg, H), rs),
                 unobs_imgs, b);
      unobs_vps.push_back(vp);
    }
    dl = losses::view_discrimination_loss(
        *dis_, obs_imgs, nn::viewpoint_features(obs_vps), unobs_imgs,
        nn::viewpoint_features(unobs_vps), labels, true);
  } else {
    Tensor real_imgs({B, dc, H, H});
    for (int b = 0; b < B; ++b) {
      const auto& s = batch.inputs[std::size_t(b)];
      if (dc == 1) {
        std::copy(s.silhouette.data.begin(), s.silhouette.data.end(),
                  real_imgs.data.begin() + long(b) * dc * np);
      } else {
        std::copy(s.image.data.begin(), s.image.data.end(),
                  real_imgs.data.begin() + long(b) * dc * np);
        std::copy(s.silhouette.data.begin(), s.silhouette.data.end(),
                  real_imgs.data.begin() + long(b) * dc * np + 3 * np);
      }
    }
    dl = losses::real_vs_fake_discrimination_loss(
        *dis_, obs_imgs, real_imgs, nn::viewpoint_features(obs_vps), labels,
        true);
  }
  opt_dis_->step();
  zero_grads(false, true);
  return dl.value;
}

StepStats Trainer::step() {
  if (cfg_.lr_decay > 0 && cfg_.iterations > 0) {
    const double scale =
        1.0 - cfg_.lr_decay * double(step_) / double(cfg_.iterations);
    opt_rec_->hp_.alpha = cfg_.optimizer.alpha * scale;
    if (opt_dis_) opt_dis_->hp_.alpha = cfg_.optimizer.alpha * scale;
  }
  StepStats stats;
  if (cfg_.adversarial_optimization == AdvMode::kGradientReversal) {
    stats = accumulate_gradients();
    opt_rec_->step();
    if (cfg_.vpl) opt_dis_->step();  // the disc still trains at lambda_d = 0
  } else {
    stats = accumulate_gradients();
    opt_rec_->step();
    if (cfg_.vpl) stats.loss_d = discriminator_pass();
  }
  ++step_;
  return stats;
}

// ------------------------------------------------------------ checkpoints

namespace {

std::vector<nn::CheckpointBlock> named_blocks(const std::string& prefix,
                                              std::vector<nn::Param*> ps,
                                              bool state_too,
                                              std::vector<nn::Param*> ss) {
  std::vector<nn::CheckpointBlock> out;
  for (std::size_t i = 0; i < ps.size(); ++i)
    out.push_back({prefix + ".p" + std::to_string(i), &ps[i]->value});
  if (state_too)
    for (std::size_t i = 0; i < ss.size(); ++i)
      out.push_back({prefix + ".s" + std::to_string(i), &ss[i]->value});
  return out;
}

json rng_json(const Rng& r) {
  auto s = r.raw_state();
  return json::array({s[0], s[1], s[2]});
}

std::array<std::uint64_t, 3> rng_from_json(const json& j) {
  return {j.at(0).get<std::uint64_t>(), j.at(1).get<std::uint64_t>(),
          j.at(2).get<std::uint64_t>()};
}

}  // namespace

void Trainer::save(const std::string& path) {
  std::vector<nn::CheckpointBlock> blocks;
  auto append = [&](std::vector<nn::CheckpointBlock> b) {
    for (auto& x : b) blocks.push_back(x);
  };
  append(named_blocks("enc", enc_->params(), true, enc_->state()));
  append(named_blocks("dec", dec_->params(), true, dec_->state()));
  if (tex_) append(named_blocks("tex", tex_->params(), true, tex_->state()));
  if (dis_) append(named_blocks("dis", dis_->params(), true, dis_->state()));
  for (std::size_t i = 0; i < opt_rec_->m_.size(); ++i) {
    blocks.push_back({"optr.m" + std::to_string(i), &opt_rec_->m_[i]});
    blocks.push_back({"optr.v" + std::to_string(i), &opt_rec_->v_[i]});
  }
  if (opt_dis_)
    for (std::size_t i = 0; i < opt_dis_->m_.size(); ++i) {
      blocks.push_back({"optd.m" + std::to_string(i), &opt_dis_->m_[i]});
      blocks.push_back({"optd.v" + std::to_string(i), &opt_dis_->v_[i]});
    }

  json header;
  header["format"] = "trainer1";
  // run-specific fields (paths, cadence, horizon) stay out of the header so
  // that identical training state always serializes to identical bytes
  json hc = cfg_.to_json();
  for (const char* key : {"dataset", "out_dir", "resume", "iterations",
                          "checkpoint_every", "log_every", "render_every",
                          "log_wall_time"})
    hc.erase(key);
  header["config"] = hc;
  header["step"] = step_;
  header["adam_t"] = {opt_rec_->t_, opt_dis_ ? opt_dis_->t_ : 0};
  header["rng"] = {{"batch", rng_json(rng_batch_)},
                   {"aug", rng_json(rng_aug_)},
                   {"vpl", rng_json(rng_vpl_)}};
  nn::save_checkpoint(path, header, blocks);
}

void Trainer::load(const std::string& path) {
  json header = nn::read_checkpoint_header(path);
  if (header.value("format", "") != "trainer1")
    throw Error("checkpoint " + path + ": format mismatch, expected trainer1");
  const json& hc = header.at("config");
  // architecture-defining fields must match the live config
  for (const char* key :
       {"vpl", "texture_prediction", "conditioning", "image_size", "scale",
        "texture_size", "mode"}) {
    if (hc.at(key) != cfg_.to_json().at(key))
      throw Error("checkpoint " + path + ": config mismatch on '" +
                  std::string(key) + "'");
  }

  std::vector<nn::CheckpointBlock> blocks;
  auto append = [&](std::vector<nn::CheckpointBlock> b) {
    for (auto& x : b) blocks.push_back(x);
  };
  append(named_blocks("enc", enc_->params(), true, enc_->state()));
  append(named_blocks("dec", dec_->params(), true, dec_->state()));
  if (tex_) append(named_blocks("tex", tex_->params(), true, tex_->state()));
  if (dis_) append(named_blocks("dis", dis_->params(), true, dis_->state()));
  for (std::size_t i = 0; i < opt_rec_->m_.size(); ++i) {
    blocks.push_back({"optr.m" + std::to_string(i), &opt_rec_->m_[i]});
    blocks.push_back({"optr.v" + std::to_string(i), &opt_rec_->v_[i]});
  }
  if (opt_dis_)
    for (std::size_t i = 0; i < opt_dis_->m_.size(); ++i) {
      blocks.push_back({"optd.m" + std::to_string(i), &opt_dis_->m_[i]});
      blocks.push_back({"optd.v" + std::to_string(i), &opt_dis_->v_[i]});
    }
  nn::load_checkpoint(path, blocks);

  step_ = header.at("step").get<long>();
  opt_rec_->t_ = header.at("adam_t").at(0).get<long>();
  if (opt_dis_) opt_dis_->t_ = header.at("adam_t").at(1).get<long>();
  rng_batch_.set_raw_state(rng_from_json(header.at("rng").at("batch")));
  rng_aug_.set_raw_state(rng_from_json(header.at("rng").at("aug")));
  rng_vpl_.set_raw_state(rng_from_json(header.at("rng").at("vpl")));
}

// ------------------------------------------------------- inference helpers

Mesh Trainer::reconstruct(const data::ViewSample& sample) {
  const int H = cfg_.image_size;
  const long np = long(H) * H;
  Tensor x({1, 4, H, H});
  std::copy(sample.image.data.begin(), sample.image.data.end(),
            x.data.begin());
  std::copy(sample.silhouette.data.begin(), sample.silhouette.data.end(),
            x.data.begin() + 3 * np);
  Tensor latent = enc_->forward(x, false);
  auto verts = dec_->forward(latent, false);
  Mesh m;
  if (tex_) {
    auto textures = tex_->forward(latent, false);
    m = uv_tmpl_.mesh;
    m.vertices = verts[0];
    m.texture.assign(textures[0].begin(), textures[0].end());
  } else {
    m = dec_->mesh_for(verts[0]);
  }
  return m;
}

void Trainer::write_render_grid(const std::string& path, int max_rows) {
  const int H = cfg_.image_size;
  const int rows = std::min<int>(max_rows, int(ds_.objects.size()));
  const int cols = 4;
  ImageU8 grid(cols * H, rows * H, 3);
  RasterSettings rs;
  for (int r = 0; r < rows; ++r) {
    const auto& obj = ds_.objects[std::size_t(r)];
    const int view = obj.designated_view >= 0 ? obj.designated_view : 0;
    const auto& s = obj.views[std::size_t(view)];
    Mesh m = reconstruct(s);
    for (int c = 0; c < cols; ++c) {
      Viewpoint vp = s.viewpoint;
      if (c > 0)
        vp = Viewpoint::make(vp.azimuth + 90.0 * c, vp.elevation, vp.distance);
      RenderOutput out = rasterize(m, Camera::make(vp, cfg_.fov_deg, H), rs);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < H; ++x)
          for (int ch = 0; ch < 3; ++ch)
            grid.at(c * H + x, r * H + y, ch) = to_u8(out.color_at(x, y, ch));
    }
  }
  write_png(path, grid);
}

// ------------------------------------------------------------ run_training

std::string run_training(const TrainConfig& cfg) {
  if (cfg.out_dir.empty()) throw Error("run_training: out_dir is empty");
  if (cfg.dataset.empty()) throw Error("run_training: dataset is empty");
  fs::create_directories(cfg.out_dir);

  data::Dataset ds = data::load_dataset(cfg.dataset);
  Trainer tr(cfg, std::move(ds));
  if (!cfg.resume.empty()) tr.load(cfg.resume);

  const fs::path out(cfg.out_dir);
  const fs::path log_path = out / "log.csv";
  const bool append = !cfg.resume.empty() && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("run_training: cannot write " + log_path.string());
  if (!append) log << "step,loss_s,loss_c,loss_d,volume_mean,wall_time\n";

  const auto t0 = std::chrono::steady_clock::now();
  std::string last_ckpt;
  char buf[512];
  for (long s = tr.step_index() + 1; s <= cfg.iterations; ++s) {
    StepStats st = tr.step();
    if (cfg.log_every > 0 && (s % cfg.log_every == 0 || s == cfg.iterations)) {
      const double wall =
          cfg.log_wall_time
              ? std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0).count()
              : 0.0;
      std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.3f\n", s,
                    st.loss_s, st.loss_c, st.loss_d, st.volume_mean, wall);
      log << buf;
      log.flush();
    }
    if ((cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0) ||
        s == cfg.iterations) {
      std::snprintf(buf, sizeof buf, "ckpt_%06ld.bin", s);
      last_ckpt = (out / buf).string();
      tr.save(last_ckpt);
    }
    if ((cfg.render_every > 0 && s % cfg.render_every == 0) ||
        s == cfg.iterations) {
      std::snprintf(buf, sizeof buf, "step_%06ld.png", s);
      tr.write_render_grid((out / buf).string());
    }
  }
  if (cfg.iterations == 0) {
    last_ckpt = (out / "ckpt_000000.bin").string();
    tr.save(last_ckpt);
  }
  return last_ckpt;
}

}  // namespace vpl::train
