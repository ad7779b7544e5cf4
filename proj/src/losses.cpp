#include "vpl/losses.hpp"

#include <cmath>

#include "vpl/nn.hpp"

namespace vpl::losses {

namespace {

constexpr double kLogGuard = 1e-12;

Tensor avg_pool2(const Tensor& x) {
  int h = x.shape[0], w = x.shape[1];
  Tensor y({h / 2, w / 2});
  for (int j = 0; j < h / 2; ++j)
    for (int i = 0; i < w / 2; ++i)
      y.at2(j, i) = 0.25 * (x.at2(2 * j, 2 * i) + x.at2(2 * j, 2 * i + 1) +
                            x.at2(2 * j + 1, 2 * i) + x.at2(2 * j + 1, 2 * i + 1));
  return y;
}

Tensor unpool2(const Tensor& g) {
  int h = g.shape[0], w = g.shape[1];
  Tensor y({h * 2, w * 2});
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      double v = 0.25 * g.at2(j, i);
      y.at2(2 * j, 2 * i) = v;
      y.at2(2 * j, 2 * i + 1) = v;
      y.at2(2 * j + 1, 2 * i) = v;
      y.at2(2 * j + 1, 2 * i + 1) = v;
    }
  return y;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SilhouetteMode silhouette_mode_from_string(const std::string& s) {
  if (s == "multiscale_cosine" || s == "cosine")
    return SilhouetteMode::kMultiscaleCosine;
  if (s == "neg_iou" || s == "iou") return SilhouetteMode::kNegIou;
  throw Error("unknown silhouette loss mode: " + s);
}

ImageLoss multiscale_cosine_silhouette(const Tensor& target,
                                       const Tensor& pred, int n_s) {
  if (target.shape.size() != 2) throw Error("silhouette must be (H,W)");
  check_same_shape(target, pred, "multiscale_cosine_silhouette");
  int h = target.shape[0], w = target.shape[1];
  if (n_s < 1) throw Error("silhouette pyramid depth must be >= 1");
  int down = 1 << (n_s - 1);
  if (down > std::min(h, w) || h % down != 0 || w % down != 0)
    throw Error("silhouette pyramid depth " + std::to_string(n_s) +
                " incompatible with " + std::to_string(h) + "x" +
                std::to_string(w));

  ImageLoss out;
  out.grad = Tensor(target.shape);
  Tensor t = target, p = pred;
  for (int level = 0; level < n_s; ++level) {
    if (level > 0) {
      t = avg_pool2(t);
      p = avg_pool2(p);
    }
    double tt = 0, pp = 0, tp = 0;
    for (long i = 0; i < t.numel(); ++i) {
      tt += t[i] * t[i];
      pp += p[i] * p[i];
      tp += t[i] * p[i];
    }
    double nt = std::sqrt(tt), np = std::sqrt(pp);
    if (nt == 0.0 || np == 0.0) {
      out.value += 1.0;  // documented degenerate convention
      continue;
    }
    out.value += 1.0 - tp / (nt * np);
    Tensor g(t.shape);
    for (long i = 0; i < t.numel(); ++i)
      g[i] = -(t[i] / (nt * np) - p[i] * tp / (nt * np * np * np));
    for (int k = 0; k < level; ++k) g = unpool2(g);
    for (long i = 0; i < g.numel(); ++i) out.grad[i] += g[i];
  }
  return out;
}

ImageLoss neg_iou_silhouette(const Tensor& target, const Tensor& pred) {
  if (target.shape.size() != 2) throw Error("silhouette must be (H,W)");
  check_same_shape(target, pred, "neg_iou_silhouette");
  double inter = 0, uni = 0;
  for (long i = 0; i < target.numel(); ++i) {
    inter += target[i] * pred[i];
    uni += target[i] + pred[i] - target[i] * pred[i];
  }
  ImageLoss out;
  out.grad = Tensor(target.shape);
  if (uni == 0.0) return out;  // both empty: loss 0 by convention
  out.value = 1.0 - inter / uni;
  for (long i = 0; i < target.numel(); ++i)
    out.grad[i] = -(target[i] * uni - inter * (1.0 - target[i])) / (uni * uni);
  return out;
}

// ---------------------------------------------------------- FeatureExtractor

FeatureExtractor::FeatureExtractor(std::uint64_t seed, int in_channels,
                                   bool linear)
    : linear_(linear) {
  Rng rng(seed);
  const int ch[6] = {in_channels, 8, 8, 16, 16, 16};
  const int stride[5] = {1, 2, 1, 2, 1};
  for (int i = 0; i < 5; ++i) {
    convs_.push_back(
        std::make_unique<nn::Conv2d>(ch[i], ch[i + 1], 3, stride[i], 1, rng));
    acts_.push_back(std::make_unique<nn::LeakyReLU>(0.1));
  }
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& x) {
  if (x.shape.size() != 3) throw Error("feature extractor expects (C,H,W)");
  if (x.shape[1] % 4 != 0 || x.shape[2] % 4 != 0)
    throw Error("feature extractor needs H,W divisible by 4, got " +
                x.shape_str());
  Tensor cur = x;
  cur.shape = {1, x.shape[0], x.shape[1], x.shape[2]};
  std::vector<Tensor> taps;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    cur = convs_[i]->forward(cur, false);
    taps.push_back(cur);
    if (i + 1 < convs_.size() && !linear_) cur = acts_[i]->forward(cur, false);
  }
  return taps;
}

Tensor FeatureExtractor::backward(const std::vector<Tensor>& tap_grads) {
  if (tap_grads.size() != convs_.size())
    throw Error("feature extractor backward: wrong tap count");
  Tensor g = tap_grads.back();
  for (int i = int(convs_.size()) - 1; i >= 0; --i) {
    g = convs_[std::size_t(i)]->backward(g);
    if (i > 0) {
      if (!linear_) g = acts_[std::size_t(i - 1)]->backward(g);
      for (long k = 0; k < g.numel(); ++k) g[k] += tap_grads[std::size_t(i - 1)][k];
    }
  }
  g.shape = {g.shape[1], g.shape[2], g.shape[3]};
  return g;
}

ImageLoss perceptual_color(const Tensor& target, const Tensor& pred,
                           FeatureExtractor& fx) {
  check_same_shape(target, pred, "perceptual_color");
  auto ft = fx.features(target);
  auto fp = fx.features(pred);  // last call: extractor caches for backward
  ImageLoss out;
  std::vector<Tensor> tap_grads;
  for (std::size_t m = 0; m < fp.size(); ++m) {
    const Tensor& a = fp[m];
    const Tensor& b = ft[m];
    double d = double(a.numel());
    double na = 0, nb = 0;
    for (long i = 0; i < a.numel(); ++i) {
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    Tensor g(a.shape);
    if (na == 0.0 || nb == 0.0) {  // documented degenerate convention
      tap_grads.push_back(std::move(g));
      continue;
    }
    double sq = 0, inner = 0;
    for (long i = 0; i < a.numel(); ++i) {
      double diff = a[i] / na - b[i] / nb;
      sq += diff * diff;
      inner += (a[i] / na) * diff;
    }
    out.value += sq / d;
    for (long i = 0; i < a.numel(); ++i) {
      double ah = a[i] / na;
      double diff = ah - b[i] / nb;
      g[i] = 2.0 / (d * na) * (diff - ah * inner);
    }
    tap_grads.push_back(std::move(g));
  }
  out.grad = fx.backward(tap_grads);
  return out;
}

// ----------------------------------------------------------- internal pressure

PressureGrads internal_pressure_grads(const Mesh& mesh) {
  PressureGrads out;
  out.grad.assign(mesh.vertices.size(), {0, 0, 0});
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    Vec3 n = cross(b - a, c - a);
    double len = norm(n);
    if (0.5 * len < kEpsArea) {
      ++out.skipped_faces;
      continue;
    }
    Vec3 unit = n * (1.0 / len);
    for (int k = 0; k < 3; ++k) out.grad[f[k]] -= unit;
  }
  return out;
}

// ------------------------------------------------------------- reconstruction

ReconLoss reconstruction_loss(const std::vector<ViewPair>& pairs,
                              double lambda_c, SilhouetteMode mode, int n_s,
                              FeatureExtractor* fx) {
  if (lambda_c > 0 && fx == nullptr)
    throw Error("reconstruction_loss: lambda_c > 0 needs a feature extractor");
  ReconLoss out;
  for (const auto& pair : pairs) {
    ImageLoss sil = mode == SilhouetteMode::kMultiscaleCosine
                        ? multiscale_cosine_silhouette(pair.target_alpha,
                                                       pair.pred_alpha, n_s)
                        : neg_iou_silhouette(pair.target_alpha,
                                             pair.pred_alpha);
    out.silhouette += sil.value;
    out.grad_alpha.push_back(std::move(sil.grad));
    if (lambda_c > 0) {
      if (pair.pred_color.numel() == 0 || pair.target_color.numel() == 0)
        throw Error("reconstruction_loss: lambda_c > 0 needs color images");
      ImageLoss perc = perceptual_color(pair.target_color, pair.pred_color, *fx);
      out.perceptual += perc.value;
      for (auto& v : perc.grad.data) v *= lambda_c;
      out.grad_color.push_back(std::move(perc.grad));
    } else {
      out.grad_color.emplace_back();
    }
  }
  out.total = out.silhouette + lambda_c * out.perceptual;
  return out;
}

// --------------------------------------------------------- view discrimination

DiscLoss view_discrimination_loss(nn::Discriminator& dis,
                                  const Tensor& obs_images,
                                  const Tensor& obs_vps,
                                  const Tensor& unobs_images,
                                  const Tensor& unobs_vps,
                                  const std::vector<int>& labels, bool train) {
  int n = obs_images.shape[0];
  DiscLoss out;

  Tensor l_obs = dis.forward(obs_images, obs_vps, labels, train);
  Tensor g({n, 1});
  for (int i = 0; i < n; ++i) {
    double p = sigmoid(l_obs.at2(i, 0));
    out.value += -std::log(std::max(p, kLogGuard));
    g.at2(i, 0) = (p - 1.0) / n;
  }
  out.grad_obs = dis.backward(g);

  Tensor l_un = dis.forward(unobs_images, unobs_vps, labels, train);
  for (int i = 0; i < n; ++i) {
    double p = sigmoid(l_un.at2(i, 0));
    out.value += -std::log(std::max(1.0 - p, kLogGuard));
    g.at2(i, 0) = p / n;
  }
  out.grad_unobs = dis.backward(g);
  out.value /= n;
  return out;
}

double view_discrimination_loss_exact(
    nn::Discriminator& dis, const Tensor& obs_images, const Tensor& obs_vps,
    const std::vector<Tensor>& unobs_images_per_view,
    const std::vector<Tensor>& unobs_vps_per_view,
    const std::vector<int>& labels) {
  if (unobs_images_per_view.empty())
    throw Error("view_discrimination_loss_exact: need unobserved views");
  if (unobs_images_per_view.size() != unobs_vps_per_view.size())
    throw Error("view_discrimination_loss_exact: view list mismatch");
  int n = obs_images.shape[0];
  double value = 0;
  Tensor l_obs = dis.forward(obs_images, obs_vps, labels, false);
  for (int i = 0; i < n; ++i)
    value += -std::log(std::max(sigmoid(l_obs.at2(i, 0)), kLogGuard));
  double k = double(unobs_images_per_view.size());  // |V| - 1
  for (std::size_t v = 0; v < unobs_images_per_view.size(); ++v) {
    Tensor l = dis.forward(unobs_images_per_view[v], unobs_vps_per_view[v],
                           labels, false);
    for (int i = 0; i < n; ++i)
      value +=
          -std::log(std::max(1.0 - sigmoid(l.at2(i, 0)), kLogGuard)) / k;
  }
  return value / n;
}

DiscLoss real_vs_fake_discrimination_loss(nn::Discriminator& dis,
                                          const Tensor& fake_images,
                                          const Tensor& real_images,
                                          const Tensor& vps,
                                          const std::vector<int>& labels,
                                          bool train) {
  int n = fake_images.shape[0];
  DiscLoss out;

  Tensor l_real = dis.forward(real_images, vps, labels, train);
  Tensor g({n, 1});
  for (int i = 0; i < n; ++i) {
    double p = sigmoid(l_real.at2(i, 0));
    out.value += -std::log(std::max(p, kLogGuard));
    g.at2(i, 0) = (p - 1.0) / n;
  }
  out.grad_obs = dis.backward(g);  // wrt the real images

  Tensor l_fake = dis.forward(fake_images, vps, labels, train);
  for (int i = 0; i < n; ++i) {
    double p = sigmoid(l_fake.at2(i, 0));
    out.value += -std::log(std::max(1.0 - p, kLogGuard));
    g.at2(i, 0) = p / n;
  }
  out.grad_unobs = dis.backward(g);  // wrt the reconstructed images
  out.value /= n;
  return out;
}

}  // namespace vpl::losses
