#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "vpl/gradcheck.hpp"
#include "vpl/losses.hpp"
#include "vpl/renderer.hpp"

using namespace vpl;
using namespace vpl::losses;

namespace {

Tensor random_image(const std::vector<int>& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("multiscale cosine silhouette") {
  Rng rng(1);
  Tensor x = random_image({16, 16}, rng);

  SUBCASE("identical nonzero silhouettes give zero loss") {
    auto r = multiscale_cosine_silhouette(x, x, 4);
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("positive scaling of the prediction is free") {
    Tensor xs = x;
    for (auto& v : xs.data) v *= 3.7;
    auto a = multiscale_cosine_silhouette(x, x, 4);
    auto b = multiscale_cosine_silhouette(x, xs, 4);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
  }
  SUBCASE("silhouettes disjoint at every level give loss N_s") {
    // single opposite corners pixels stay disjoint until pooling merges
    // them; use left/right halves instead, disjoint at every level
    Tensor a({16, 16}), b({16, 16});
    for (int j = 0; j < 16; ++j)
      for (int i = 0; i < 8; ++i) {
        a.at2(j, i) = 1.0;
        b.at2(j, i + 8) = 1.0;
      }
    auto r = multiscale_cosine_silhouette(a, b, 4);
    CHECK(r.value == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("loss bounded by [0, N_s]") {
    for (int t = 0; t < 20; ++t) {
      Tensor a = random_image({8, 8}, rng);
      Tensor b = random_image({8, 8}, rng);
      auto r = multiscale_cosine_silhouette(a, b, 3);
      CHECK(r.value >= 0.0);
      CHECK(r.value <= 3.0);
    }
  }
  SUBCASE("zero-norm level contributes 1 with zero gradient") {
    Tensor zero({16, 16});
    auto r = multiscale_cosine_silhouette(zero, x, 1);
    // target empty at every level
    CHECK(r.value == doctest::Approx(1.0));
    for (double g : r.grad.data) CHECK(g == 0.0);
  }
  SUBCASE("depth incompatible with image size is rejected") {
    CHECK_THROWS_AS(multiscale_cosine_silhouette(x, x, 9), Error);
  }
}

TEST_CASE("negative IoU silhouette") {
  SUBCASE("identical nonempty binary silhouettes give 0") {
    Tensor a({4, 4});
    a.at2(1, 1) = a.at2(1, 2) = a.at2(2, 1) = 1.0;
    auto r = neg_iou_silhouette(a, a);
    CHECK(r.value == doctest::Approx(0.0));
  }
  SUBCASE("disjoint binary silhouettes give 1") {
    Tensor a({4, 4}), b({4, 4});
    a.at2(0, 0) = 1.0;
    b.at2(3, 3) = 1.0;
    CHECK(neg_iou_silhouette(a, b).value == doctest::Approx(1.0));
  }
  SUBCASE("both empty gives 0 by convention") {
    Tensor z({4, 4});
    auto r = neg_iou_silhouette(z, z);
    CHECK(r.value == 0.0);
    for (double g : r.grad.data) CHECK(g == 0.0);
  }
  SUBCASE("loss stays in [0,1] on soft inputs") {
    Rng rng(2);
    for (int t = 0; t < 30; ++t) {
      Tensor a = random_image({8, 8}, rng);
      Tensor b = random_image({8, 8}, rng);
      double v = neg_iou_silhouette(a, b).value;
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("perceptual color loss") {
  FeatureExtractor fx(77);
  Rng rng(3);
  Tensor x = random_image({3, 16, 16}, rng);

  SUBCASE("identical images give zero") {
    auto r = perceptual_color(x, x, fx);
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-12));
    for (double g : r.grad.data) CHECK(std::abs(g) < 1e-12);
  }
  SUBCASE("scale cancels under a purely linear extractor") {
    FeatureExtractor lin(77, 3, true);
    Tensor x2 = x;
    for (auto& v : x2.data) v *= 2.0;
    auto r = perceptual_color(x, x2, lin);
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("deterministic across instances with equal seeds") {
    FeatureExtractor fx2(77);
    Tensor y = random_image({3, 16, 16}, rng);
    CHECK(perceptual_color(x, y, fx).value ==
          perceptual_color(x, y, fx2).value);
  }
  SUBCASE("loss is nonnegative") {
    for (int t = 0; t < 10; ++t) {
      Tensor a = random_image({3, 16, 16}, rng);
      Tensor b = random_image({3, 16, 16}, rng);
      CHECK(perceptual_color(a, b, fx).value >= 0.0);
    }
  }
}

TEST_CASE("internal pressure gradients") {
  SUBCASE("cube template: every vertex gradient points outward") {
    Mesh m = make_cube_template().mesh;
    auto pg = internal_pressure_grads(m);
    CHECK(pg.skipped_faces == 0);
    Vec3 centroid{0, 0, 0};
    for (const auto& v : m.vertices) centroid += v;
    centroid = centroid / double(m.vertices.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i) {
      // descent direction is -grad
      CHECK(dot(-pg.grad[i], m.vertices[i] - centroid) > 0.0);
    }
  }
  SUBCASE("one descent step increases signed volume") {
    Mesh m = make_cube_template().mesh;
    double before = signed_volume(m);
    auto pg = internal_pressure_grads(m);
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
      m.vertices[i] -= pg.grad[i] * 1e-2;
    CHECK(signed_volume(m) > before);
  }
  SUBCASE("flat +z sheet: gradient is -(0,0,k) per vertex") {
    Mesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};  // both normals +z
    auto pg = internal_pressure_grads(m);
    int incident[4] = {2, 1, 2, 1};
    for (int i = 0; i < 4; ++i) {
      CHECK(pg.grad[i].x == doctest::Approx(0.0));
      CHECK(pg.grad[i].y == doctest::Approx(0.0));
      CHECK(pg.grad[i].z == doctest::Approx(-double(incident[i])));
    }
  }
  SUBCASE("degenerate faces are skipped and counted") {
    Mesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}};
    m.faces = {{0, 1, 2}, {0, 1, 1}};
    auto pg = internal_pressure_grads(m);
    CHECK(pg.skipped_faces == 1);
  }
}

TEST_CASE("reconstruction loss") {
  Rng rng(4);
  FeatureExtractor fx(9);

  ViewPair pair;
  pair.target_alpha = random_image({16, 16}, rng);
  pair.pred_alpha = random_image({16, 16}, rng);
  pair.target_color = random_image({3, 16, 16}, rng);
  pair.pred_color = random_image({3, 16, 16}, rng);

  SUBCASE("prediction equal to target gives 0") {
    ViewPair eq = pair;
    eq.pred_alpha = eq.target_alpha;
    eq.pred_color = eq.target_color;
    auto r = reconstruction_loss({eq}, 0.5,
                                 SilhouetteMode::kMultiscaleCosine, 3, &fx);
    CHECK(r.total == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("lambda_c = 0 reduces to pure silhouette loss") {
    auto r = reconstruction_loss({pair}, 0.0, SilhouetteMode::kNegIou, 3,
                                 nullptr);
    auto s = neg_iou_silhouette(pair.target_alpha, pair.pred_alpha);
    CHECK(r.total == doctest::Approx(s.value));
    CHECK(r.perceptual == 0.0);
  }
  SUBCASE("two pairs sum the independent single-pair losses") {
    ViewPair other;
    other.target_alpha = random_image({16, 16}, rng);
    other.pred_alpha = random_image({16, 16}, rng);
    other.target_color = random_image({3, 16, 16}, rng);
    other.pred_color = random_image({3, 16, 16}, rng);
    auto both = reconstruction_loss({pair, other}, 0.5,
                                    SilhouetteMode::kMultiscaleCosine, 3, &fx);
    auto a = reconstruction_loss({pair}, 0.5,
                                 SilhouetteMode::kMultiscaleCosine, 3, &fx);
    auto b = reconstruction_loss({other}, 0.5,
                                 SilhouetteMode::kMultiscaleCosine, 3, &fx);
    CHECK(both.total == doctest::Approx(a.total + b.total).epsilon(1e-12));
    CHECK(both.grad_alpha.size() == 2);
  }
  SUBCASE("lambda_c > 0 without extractor is rejected") {
    CHECK_THROWS_AS(reconstruction_loss(
                        {pair}, 0.5, SilhouetteMode::kNegIou, 3, nullptr),
                    Error);
  }
}

TEST_CASE("view discrimination loss") {
  Rng rng(5);
  nn::Discriminator dis(1, 16, nn::Conditioning::kViewpoint, 0, false, 0.25,
                        rng);
  Tensor obs = random_image({2, 1, 16, 16}, rng);
  Tensor unobs = random_image({2, 1, 16, 16}, rng);
  Tensor vp_obs = nn::viewpoint_features(
      {Viewpoint::make(10, 5, 2.5), Viewpoint::make(100, -5, 2.5)});
  Tensor vp_un = nn::viewpoint_features(
      {Viewpoint::make(200, 15, 2.5), Viewpoint::make(300, 0, 2.5)});

  SUBCASE("constant 0.5 discriminator gives 2 log 2 and no input gradient") {
    // zero every parameter: logits are exactly 0, sigmoid = 0.5
    for (auto* p : dis.params()) p->value.fill(0);
    auto r = view_discrimination_loss(dis, obs, vp_obs, unobs, vp_un, {},
                                      false);
    CHECK(r.value == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    for (double g : r.grad_obs.data) CHECK(g == 0.0);
    for (double g : r.grad_unobs.data) CHECK(g == 0.0);
  }

  SUBCASE("near-perfect discrimination drives the loss toward 0") {
    // bias-only discriminator: huge positive logit regardless of input would
    // not separate, so emulate via the head bias on a zeroed net and check
    // the observed term alone
    for (auto* p : dis.params()) p->value.fill(0);
    auto ps = dis.params();
    // last linear bias
    nn::Param* head_b = nullptr;
    for (auto* p : ps)
      if (p->name == "b") head_b = p;
    REQUIRE(head_b != nullptr);
    head_b->value.fill(30.0);
    Tensor l = dis.forward(obs, vp_obs, {}, false);
    double obs_term = -std::log(1.0 / (1.0 + std::exp(-l.at2(0, 0))));
    CHECK(obs_term < 1e-10);
  }

  SUBCASE("input gradients match finite differences") {
    auto r = view_discrimination_loss(dis, obs, vp_obs, unobs, vp_un, {},
                                      false);
    const double h = 1e-5;
    Rng pick(7);
    for (int t = 0; t < 10; ++t) {
      long i = long(pick.next_below(std::uint64_t(obs.numel())));
      Tensor hi = obs, lo = obs;
      hi[i] += h;
      lo[i] -= h;
      double fh = view_discrimination_loss(dis, hi, vp_obs, unobs, vp_un, {},
                                           false)
                      .value;
      double fl = view_discrimination_loss(dis, lo, vp_obs, unobs, vp_un, {},
                                           false)
                      .value;
      double fd = (fh - fl) / (2 * h);
      CHECK(std::abs(fd - r.grad_obs[i]) / std::max(std::abs(fd), 1.0) < 1e-4);
    }
  }

  SUBCASE("reversal bookkeeping scales the reconstructor gradient") {
    auto r = view_discrimination_loss(dis, obs, vp_obs, unobs, vp_un, {},
                                      false);
    double lambda_d = 0.2;
    nn::GradientReversal rev(lambda_d);
    Tensor rec_grad = rev.backward(r.grad_obs);
    for (long i = 0; i < rec_grad.numel(); ++i)
      CHECK(rec_grad[i] == doctest::Approx(-lambda_d * r.grad_obs[i]));
  }

  SUBCASE("exact mode averages the unobserved views") {
    std::vector<Tensor> imgs, vps;
    for (int k = 0; k < 3; ++k) {
      imgs.push_back(random_image({2, 1, 16, 16}, rng));
      vps.push_back(nn::viewpoint_features(
          {Viewpoint::make(40.0 * k + 20, 0, 2.5),
           Viewpoint::make(40.0 * k + 140, 10, 2.5)}));
    }
    double exact =
        view_discrimination_loss_exact(dis, obs, vp_obs, imgs, vps, {});
    // reference: manual average
    auto prob = [&](const Tensor& im, const Tensor& v, int i) {
      Tensor l = dis.forward(im, v, {}, false);
      return 1.0 / (1.0 + std::exp(-l.at2(i, 0)));
    };
    double ref = 0;
    for (int i = 0; i < 2; ++i) {
      ref += -std::log(prob(obs, vp_obs, i));
      for (int k = 0; k < 3; ++k)
        ref += -std::log(1.0 - prob(imgs[k], vps[k], i)) / 3.0;
    }
    ref /= 2.0;
    CHECK(exact == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("real vs fake discrimination loss") {
  Rng rng(6);
  nn::Discriminator dis(1, 16, nn::Conditioning::kViewpoint, 0, false, 0.25,
                        rng);
  Tensor fake = random_image({2, 1, 16, 16}, rng);
  Tensor vp = nn::viewpoint_features(
      {Viewpoint::make(10, 5, 2.5), Viewpoint::make(100, -5, 2.5)});

  SUBCASE("constant 0.5 discriminator gives 2 log 2") {
    for (auto* p : dis.params()) p->value.fill(0);
    auto r = real_vs_fake_discrimination_loss(dis, fake, fake, vp, {}, false);
    CHECK(r.value == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("identical render and real view make both terms equal") {
    Tensor l = dis.forward(fake, vp, {}, false);
    auto r = real_vs_fake_discrimination_loss(dis, fake, fake, vp, {}, false);
    double expect = 0;
    for (int i = 0; i < 2; ++i) {
      double p = 1.0 / (1.0 + std::exp(-l.at2(i, 0)));
      expect += -std::log(p) - std::log(1.0 - p);
    }
    CHECK(r.value == doctest::Approx(expect / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("losses gradient-check suite passes") {
  auto results = checks::run_losses_checks(321, 60);
  for (const auto& r : results) {
    INFO(r.name << " max_err=" << r.max_err << " tol=" << r.tol);
    CHECK(r.pass);
  }
}
