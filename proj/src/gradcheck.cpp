#include "vpl/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "vpl/losses.hpp"
#include "vpl/nn.hpp"

namespace vpl::checks {

std::vector<std::array<double, 2>> oracle_backward_pixels(
    const RenderOutput& out, const std::vector<double>& grad_color,
    const std::vector<double>& grad_alpha, const Mesh& mesh) {
  const int n = out.size;
  const int pad = n + 2;

  // Padded RGBA value and gradient planes; the border carries the background
  // color with alpha 0 and zero gradient.
  std::vector<double> P(std::size_t(pad) * pad * 4, 0.0);
  std::vector<double> G(std::size_t(pad) * pad * 4, 0.0);
  for (int y = 0; y < pad; ++y)
    for (int x = 0; x < pad; ++x) {
      std::size_t q = (std::size_t(y) * pad + x) * 4;
      P[q + 0] = out.background[0];
      P[q + 1] = out.background[1];
      P[q + 2] = out.background[2];
      P[q + 3] = 0.0;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      std::size_t q = (std::size_t(y + 1) * pad + (x + 1)) * 4;
      std::size_t p = std::size_t(y) * n + x;
      for (int c = 0; c < 3; ++c) {
        P[q + c] = out.color[p * 3 + c];
        G[q + c] = grad_color[p * 3 + c];
      }
      P[q + 3] = out.alpha[p];
      G[q + 3] = grad_alpha[p];
    }

  auto select = [](double gp_right, double gp_left) {
    double d_right = -gp_right;
    double d_left = gp_left;
    if (std::max(d_right, d_left) < 0.0) return 0.0;
    if (d_left < d_right) return gp_right;
    if (d_right < d_left) return gp_left;
    return gp_right;  // documented tie-break
  };

  std::vector<std::array<double, 2>> grad(mesh.vertices.size(), {0.0, 0.0});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      std::size_t p = std::size_t(y) * n + x;
      int f = out.face_id[p];
      if (f < 0) continue;

      std::size_t qc = (std::size_t(y + 1) * pad + (x + 1)) * 4;
      std::size_t ql = qc - 4, qr = qc + 4;
      std::size_t qu = qc - std::size_t(pad) * 4, qd = qc + std::size_t(pad) * 4;

      double gpr_x = 0, gpl_x = 0, gpr_y = 0, gpl_y = 0;
      for (int c = 0; c < 4; ++c) {
        gpr_x += G[qc + c] * (P[ql + c] - P[qc + c]) +
                 G[qr + c] * (P[qc + c] - P[qr + c]);
        gpl_x += G[qc + c] * (P[qc + c] - P[qr + c]) +
                 G[ql + c] * (P[ql + c] - P[qc + c]);
        gpr_y += G[qc + c] * (P[qu + c] - P[qc + c]) +
                 G[qd + c] * (P[qc + c] - P[qd + c]);
        gpl_y += G[qc + c] * (P[qc + c] - P[qd + c]) +
                 G[qu + c] * (P[qu + c] - P[qc + c]);
      }
      double gx = select(gpr_x, gpl_x);
      double gy = select(gpr_y, gpl_y);
      for (int k = 0; k < 3; ++k) {
        grad[mesh.faces[f][k]][0] += out.bary[p * 3 + k] * gx;
        grad[mesh.faces[f][k]][1] += out.bary[p * 3 + k] * gy;
      }
    }
  return grad;
}

RandomScene random_scene(Rng& rng) {
  RandomScene s;
  int nv = 4 + int(rng.next_below(5));  // 4..8 vertices
  for (int i = 0; i < nv; ++i)
    s.mesh.vertices.push_back(
        {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
  int nf = 1 + int(rng.next_below(6));  // 1..6 faces
  for (int f = 0; f < nf; ++f) {
    int a = int(rng.next_below(nv)), b = int(rng.next_below(nv)),
        c = int(rng.next_below(nv));
    if (a == b || b == c || a == c) continue;
    s.mesh.faces.push_back({a, b, c});
  }
  if (s.mesh.faces.empty()) s.mesh.faces.push_back({0, 1, 2});

  int size = 8 + int(rng.next_below(9));  // 8..16
  auto vp = Viewpoint::make(rng.uniform(0, 360), rng.uniform(-60, 60),
                            rng.uniform(1.8, 3.0));
  s.camera = Camera::make(vp, 40, size);
  s.settings.background = {rng.uniform(), rng.uniform(), rng.uniform()};
  s.settings.face_color = {rng.uniform(), rng.uniform(), rng.uniform()};
  return s;
}

namespace {

CheckResult check_backward_oracle(std::uint64_t seed, int scenes) {
  Rng rng(seed);
  double max_err = 0;
  for (int t = 0; t < scenes; ++t) {
    RandomScene s = random_scene(rng);
    RenderOutput out = rasterize(s.mesh, s.camera, s.settings);
    long np = long(out.size) * out.size;
    std::vector<double> gc(np * 3), ga(np);
    for (auto& v : gc) v = rng.gaussian();
    for (auto& v : ga) v = rng.gaussian();
    auto impl = backward_pixels_to_projected(out, gc, ga, s.mesh);
    auto orac = oracle_backward_pixels(out, gc, ga, s.mesh);
    for (std::size_t i = 0; i < impl.size(); ++i)
      for (int a = 0; a < 2; ++a)
        max_err = std::max(max_err, std::abs(impl[i][a] - orac[i][a]));
  }
  return {"renderer.backward_pixels_vs_oracle", max_err, 1e-9,
          max_err < 1e-9};
}

CheckResult check_projection_jacobian(std::uint64_t seed) {
  Rng rng(seed + 1);
  auto cam = Camera::make(Viewpoint::make(33, 12, 2.5), 40, 64);
  const double h = 1e-4;
  double max_rel = 0;
  Mesh probe;
  probe.vertices.resize(1);
  for (int t = 0; t < 100; ++t) {
    Vec3 p{rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
           rng.uniform(-0.6, 0.6)};
    auto jac = projection_jacobian(cam, p);
    for (int a = 0; a < 3; ++a) {
      Vec3 dp{a == 0 ? h : 0.0, a == 1 ? h : 0.0, a == 2 ? h : 0.0};
      probe.vertices[0] = p + dp;
      auto hi = project_vertices(probe, cam)[0];
      probe.vertices[0] = p - dp;
      auto lo = project_vertices(probe, cam)[0];
      double fd_x = (hi.x - lo.x) / (2 * h), fd_y = (hi.y - lo.y) / (2 * h);
      double an_x = a == 0 ? jac[0].x : (a == 1 ? jac[0].y : jac[0].z);
      double an_y = a == 0 ? jac[1].x : (a == 1 ? jac[1].y : jac[1].z);
      double scale = std::max({std::abs(fd_x), std::abs(fd_y), 1.0});
      max_rel = std::max(max_rel, std::abs(fd_x - an_x) / scale);
      max_rel = std::max(max_rel, std::abs(fd_y - an_y) / scale);
    }
  }
  return {"renderer.projection_jacobian_fd", max_rel, 1e-5, max_rel < 1e-5};
}

CheckResult check_projected_to_vertices(std::uint64_t seed) {
  Rng rng(seed + 2);
  auto cam = Camera::make(Viewpoint::make(211, -18, 2.2), 35, 32);
  const double h = 1e-6;
  double max_rel = 0;
  for (int t = 0; t < 100; ++t) {
    Mesh m;
    m.vertices.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                          rng.uniform(-0.5, 0.5)});
    double cx = rng.gaussian(), cy = rng.gaussian();
    std::vector<std::array<double, 2>> g2{{cx, cy}};
    Vec3 an = backward_projected_to_vertices(g2, cam, m)[0];
    for (int a = 0; a < 3; ++a) {
      Vec3 dp{a == 0 ? h : 0.0, a == 1 ? h : 0.0, a == 2 ? h : 0.0};
      Mesh hi_m = m, lo_m = m;
      hi_m.vertices[0] += dp;
      lo_m.vertices[0] -= dp;
      auto hi = project_vertices(hi_m, cam)[0];
      auto lo = project_vertices(lo_m, cam)[0];
      double fd = (cx * (hi.x - lo.x) + cy * (hi.y - lo.y)) / (2 * h);
      double anv = a == 0 ? an.x : (a == 1 ? an.y : an.z);
      double scale = std::max(std::abs(fd), 1.0);
      max_rel = std::max(max_rel, std::abs(fd - anv) / scale);
    }
  }
  return {"renderer.projected_to_vertices_fd", max_rel, 1e-5, max_rel < 1e-5};
}

CheckResult check_texture_adjoint(std::uint64_t seed) {
  Rng rng(seed + 3);
  double max_rel = 0;
  for (int t = 0; t < 10; ++t) {
    auto tmpl = make_cube_template(4);
    for (auto& g : tmpl.mesh.texture)
      for (auto& v : g.texels) v = rng.uniform(0.2, 0.8);
    auto cam = Camera::make(
        Viewpoint::make(rng.uniform(0, 360), rng.uniform(-30, 30), 2.5), 40, 8);
    RasterSettings rs;
    RenderOutput out = rasterize(tmpl.mesh, cam, rs);
    long np = long(out.size) * out.size;
    std::vector<double> gc(np * 3);
    for (auto& v : gc) v = rng.gaussian();
    auto grads = backward_texture(out, gc, tmpl.mesh);

    const double h = 1e-5;
    // probe a handful of texels per scene
    for (int probe = 0; probe < 40; ++probe) {
      int grid = int(rng.next_below(6));
      int texel = int(rng.next_below(16)), chan = int(rng.next_below(3));
      Mesh hi = tmpl.mesh, lo = tmpl.mesh;
      hi.texture[grid].texels[texel * 3 + chan] += h;
      lo.texture[grid].texels[texel * 3 + chan] -= h;
      auto out_hi = rasterize(hi, cam, rs);
      auto out_lo = rasterize(lo, cam, rs);
      double fd = 0;
      for (long i = 0; i < np * 3; ++i)
        fd += gc[i] * (out_hi.color[i] - out_lo.color[i]);
      fd /= 2 * h;
      double an = grads[grid].texels[texel * 3 + chan];
      double scale = std::max(std::abs(fd), 1.0);
      max_rel = std::max(max_rel, std::abs(fd - an) / scale);
    }
  }
  return {"renderer.texture_adjoint_fd", max_rel, 1e-4, max_rel < 1e-4};
}

}  // namespace

std::vector<CheckResult> run_renderer_checks(std::uint64_t seed,
                                             int oracle_scenes) {
  std::vector<CheckResult> r;
  r.push_back(check_backward_oracle(seed, oracle_scenes));
  r.push_back(check_projection_jacobian(seed));
  r.push_back(check_projected_to_vertices(seed));
  r.push_back(check_texture_adjoint(seed));
  return r;
}

namespace {

using nn::Layer;
using nn::Param;

// Central-difference check of one layer's backward pass against its forward.
// Persistent state (power-iteration vectors, running stats) is restored
// before every forward so each probe evaluates the same function the
// analytic backward differentiated. `corrupt_bump` deliberately biases the
// analytic gradients (negative-control fixture).
double layer_fd_max_rel(Layer& layer, Tensor x, Rng& rng, int max_probes,
                        double corrupt_bump = 0.0) {
  const double h = 1e-5;
  auto states = layer.state();
  std::vector<Tensor> snap;
  for (auto* s : states) snap.push_back(s->value);
  auto restore = [&] {
    for (std::size_t i = 0; i < states.size(); ++i) states[i]->value = snap[i];
  };

  restore();
  Tensor y0 = layer.forward(x, true);
  Tensor r(y0.shape);
  for (auto& v : r.data) v = rng.gaussian();

  for (auto* p : layer.params()) p->zero_grad();
  Tensor gx = layer.backward(r);
  if (corrupt_bump != 0.0) {
    for (auto& v : gx.data) v += corrupt_bump;
    for (auto* p : layer.params())
      for (auto& v : p->grad.data) v += corrupt_bump;
  }

  auto loss = [&] {
    restore();
    Tensor y = layer.forward(x, true);
    double s = 0;
    for (long i = 0; i < y.numel(); ++i) s += r[i] * y[i];
    return s;
  };

  double max_rel = 0;
  auto probe = [&](double& slot, double analytic) {
    double keep = slot;
    slot = keep + h;
    double hi = loss();
    slot = keep - h;
    double lo = loss();
    slot = keep;
    double fd = (hi - lo) / (2 * h);
    double scale = std::max(std::abs(fd), 1.0);
    max_rel = std::max(max_rel, std::abs(fd - analytic) / scale);
  };

  long nx = x.numel();
  for (int t = 0; t < max_probes; ++t) {
    long i = long(rng.next_below(std::uint64_t(nx)));
    probe(x[i], gx[i]);
  }
  for (auto* p : layer.params()) {
    long np = p->value.numel();
    for (int t = 0; t < std::min<long>(max_probes, np); ++t) {
      long i = long(rng.next_below(std::uint64_t(np)));
      probe(p->value[i], p->grad[i]);
    }
  }
  restore();
  return max_rel;
}

Tensor random_tensor(const std::vector<int>& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data) v = rng.gaussian();
  return t;
}

CheckResult fd_check(const std::string& name, std::uint64_t seed, int trials,
                     const std::function<nn::LayerPtr(Rng&)>& make,
                     const std::vector<int>& in_shape,
                     double corrupt_bump = 0.0) {
  Rng rng(seed);
  double max_rel = 0;
  for (int t = 0; t < trials; ++t) {
    auto layer = make(rng);
    Tensor x = random_tensor(in_shape, rng);
    max_rel = std::max(max_rel,
                       layer_fd_max_rel(*layer, x, rng, 12, corrupt_bump));
  }
  return {name, max_rel, 1e-4, max_rel < 1e-4};
}

CheckResult check_gradient_reversal(std::uint64_t seed) {
  Rng rng(seed);
  double max_err = 0;
  for (int t = 0; t < 20; ++t) {
    double lambda = rng.uniform(0, 3);
    nn::GradientReversal rev(lambda);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor y = rev.forward(x, true);
    for (long i = 0; i < x.numel(); ++i)
      max_err = std::max(max_err, std::abs(y[i] - x[i]));
    Tensor g = random_tensor({3, 5}, rng);
    Tensor gx = rev.backward(g);
    for (long i = 0; i < g.numel(); ++i)
      max_err = std::max(max_err, std::abs(gx[i] + lambda * g[i]));
  }
  return {"nn.gradient_reversal_exact", max_err, 1e-15, max_err < 1e-15};
}

CheckResult check_spectral_sigma(std::uint64_t seed) {
  // after normalization the estimated top singular value must be 1
  Rng rng(seed);
  double max_err = 0;
  for (int t = 0; t < 20; ++t) {
    int rows = 3 + int(rng.next_below(6)), cols = 3 + int(rng.next_below(6));
    Tensor w = random_tensor({rows, cols}, rng);
    Tensor u = random_tensor({rows}, rng), v({cols});
    Tensor w_hat = nn::spectral_normalize(w, rows, cols, u, v, 500);
    Tensor u2 = u, v2 = v;
    double sigma_hat = 0;
    nn::spectral_normalize(w_hat, rows, cols, u2, v2, 500, &sigma_hat);
    max_err = std::max(max_err, std::abs(sigma_hat - 1.0));
  }
  return {"nn.spectral_norm_sigma", max_err, 1e-6, max_err < 1e-6};
}

CheckResult check_adam_reference(std::uint64_t seed) {
  // scalar trace vs a from-scratch transcription of the update rule
  Rng rng(seed);
  double max_err = 0;
  for (int t = 0; t < 10; ++t) {
    nn::AdamParams hp;
    hp.alpha = rng.uniform(1e-4, 1e-2);
    double theta = rng.gaussian(), ref = theta;
    Tensor p({1}), m({1}), v({1});
    p[0] = theta;
    long step = 0;
    double rm = 0, rv = 0;
    for (int k = 1; k <= 10; ++k) {
      double g = rng.gaussian();
      Tensor gt({1});
      gt[0] = g;
      nn::adam_step(p, gt, m, v, step, hp);
      rm = hp.beta1 * rm + (1 - hp.beta1) * g;
      rv = hp.beta2 * rv + (1 - hp.beta2) * g * g;
      double mh = rm / (1 - std::pow(hp.beta1, k));
      double vh = rv / (1 - std::pow(hp.beta2, k));
      ref -= hp.alpha * mh / (std::sqrt(vh) + hp.eps);
      max_err = std::max(max_err, std::abs(p[0] - ref));
    }
  }
  return {"nn.adam_vs_reference", max_err, 1e-10, max_err < 1e-10};
}

}  // namespace

std::vector<CheckResult> run_nn_checks(std::uint64_t seed, int fd_seeds,
                                       bool corrupt) {
  int trials = std::max(2, fd_seeds / 20);
  std::vector<CheckResult> r;
  r.push_back(fd_check("nn.linear_fd", seed + 11, trials,
                       [](Rng& rng) {
                         return std::make_unique<nn::Linear>(7, 5, rng);
                       },
                       {3, 7}));
  // the spectral-norm gradient holds u,v at the top singular vectors, so the
  // finite-difference comparison runs the power iteration to convergence
  r.push_back(fd_check("nn.linear_sn_fd", seed + 12, trials,
                       [](Rng& rng) {
                         auto l = std::make_unique<nn::Linear>(6, 4, rng, true);
                         l->sn_iters_ = 200;
                         return l;
                       },
                       {3, 6}));
  r.push_back(fd_check("nn.conv_fd", seed + 13, trials,
                       [](Rng& rng) {
                         return std::make_unique<nn::Conv2d>(2, 3, 3, 2, 1,
                                                             rng);
                       },
                       {2, 2, 5, 6}, corrupt ? 0.01 : 0.0));
  r.push_back(fd_check("nn.conv_sn_fd", seed + 14, trials,
                       [](Rng& rng) {
                         auto c = std::make_unique<nn::Conv2d>(2, 3, 4, 2, 1,
                                                               rng, true);
                         c->sn_iters_ = 200;
                         return c;
                       },
                       {2, 2, 6, 6}));
  r.push_back(fd_check("nn.deconv_fd", seed + 15, trials,
                       [](Rng& rng) {
                         return std::make_unique<nn::Deconv2d>(3, 2, 4, 2, 1,
                                                               rng);
                       },
                       {2, 3, 3, 4}));
  r.push_back(fd_check("nn.batchnorm_fd", seed + 16, trials,
                       [](Rng&) { return std::make_unique<nn::BatchNorm2d>(3); },
                       {4, 3, 4, 5}));
  r.push_back(fd_check("nn.activations_fd", seed + 17, trials,
                       [](Rng&) {
                         // wrapped so the chain checks as one layer
                         struct Chain : Layer {
                           nn::Sequential s;
                           Tensor forward(const Tensor& x, bool tr) override {
                             return s.forward(x, tr);
                           }
                           Tensor backward(const Tensor& g) override {
                             return s.backward(g);
                           }
                           std::string kind() const override { return "chain"; }
                         };
                         auto c = std::make_unique<Chain>();
                         c->s.add(std::make_unique<nn::Tanh>());
                         c->s.add(std::make_unique<nn::LeakyReLU>(0.2));
                         c->s.add(std::make_unique<nn::Sigmoid>());
                         c->s.add(std::make_unique<nn::ReLU>());
                         return c;
                       },
                       {3, 8}));
  r.push_back(check_gradient_reversal(seed + 18));
  r.push_back(check_spectral_sigma(seed + 19));
  r.push_back(check_adam_reference(seed + 20));
  return r;
}
namespace {

// generic FD comparison for a pure (loss, grad) image functional
template <typename F>
double image_loss_fd(F&& fn, const Tensor& target, Tensor pred, Rng& rng,
                     int probes) {
  auto [value, grad] = fn(target, pred);
  (void)value;
  const double h = 1e-5;
  double max_rel = 0;
  for (int t = 0; t < probes; ++t) {
    long i = long(rng.next_below(std::uint64_t(pred.numel())));
    double keep = pred[i];
    pred[i] = keep + h;
    double hi = fn(target, pred).value;
    pred[i] = keep - h;
    double lo = fn(target, pred).value;
    pred[i] = keep;
    double fd = (hi - lo) / (2 * h);
    double scale = std::max(std::abs(fd), 1.0);
    max_rel = std::max(max_rel, std::abs(fd - grad[i]) / scale);
  }
  return max_rel;
}

Tensor random_image(const std::vector<int>& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

CheckResult check_neg_iou_fd(std::uint64_t seed, int trials) {
  Rng rng(seed);
  double max_rel = 0;
  for (int t = 0; t < trials; ++t) {
    Tensor target = random_image({8, 8}, rng);
    Tensor pred = random_image({8, 8}, rng);
    max_rel = std::max(
        max_rel, image_loss_fd(
                     [](const Tensor& a, const Tensor& b) {
                       return losses::neg_iou_silhouette(a, b);
                     },
                     target, pred, rng, 16));
  }
  return {"losses.neg_iou_fd", max_rel, 1e-5, max_rel < 1e-5};
}

CheckResult check_cosine_fd(std::uint64_t seed, int trials) {
  Rng rng(seed);
  double max_rel = 0;
  for (int t = 0; t < trials; ++t) {
    Tensor target = random_image({8, 8}, rng);
    Tensor pred = random_image({8, 8}, rng);
    max_rel = std::max(
        max_rel, image_loss_fd(
                     [](const Tensor& a, const Tensor& b) {
                       return losses::multiscale_cosine_silhouette(a, b, 3);
                     },
                     target, pred, rng, 16));
  }
  return {"losses.multiscale_cosine_fd", max_rel, 1e-4, max_rel < 1e-4};
}

CheckResult check_perceptual_fd(std::uint64_t seed, int trials) {
  Rng rng(seed);
  losses::FeatureExtractor fx(seed + 5);
  double max_rel = 0;
  for (int t = 0; t < trials; ++t) {
    Tensor target = random_image({3, 16, 16}, rng);
    Tensor pred = random_image({3, 16, 16}, rng);
    max_rel = std::max(
        max_rel, image_loss_fd(
                     [&fx](const Tensor& a, const Tensor& b) {
                       return losses::perceptual_color(a, b, fx);
                     },
                     target, pred, rng, 10));
  }
  return {"losses.perceptual_fd", max_rel, 1e-4, max_rel < 1e-4};
}

CheckResult check_pressure_inflates(std::uint64_t seed, int trials) {
  Rng rng(seed);
  double min_gain = 1e300;
  for (int t = 0; t < trials; ++t) {
    Mesh m = make_cube_template().mesh;
    if (t > 0)  // random smooth-ish deformations of the template
      for (auto& v : m.vertices) {
        double r = 1.0 + 0.25 * std::sin(3 * v.x + double(t)) *
                             std::cos(2 * v.y - 0.5 * double(t));
        v = v * r;
      }
    double before = signed_volume(m);
    auto pg = losses::internal_pressure_grads(m);
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
      m.vertices[i] -= pg.grad[i] * 1e-2;
    min_gain = std::min(min_gain, signed_volume(m) - before);
  }
  return {"losses.pressure_inflates_volume", -min_gain, 0.0, min_gain > 0.0};
}

}  // namespace

std::vector<CheckResult> run_losses_checks(std::uint64_t seed, int fd_seeds) {
  int trials = std::max(2, fd_seeds / 20);
  std::vector<CheckResult> r;
  r.push_back(check_neg_iou_fd(seed + 31, trials));
  r.push_back(check_cosine_fd(seed + 32, trials));
  r.push_back(check_perceptual_fd(seed + 33, trials));
  r.push_back(check_pressure_inflates(seed + 34, 6));
  return r;
}

bool all_pass(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace vpl::checks
