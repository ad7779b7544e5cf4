#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "vpl/gradcheck.hpp"
#include "vpl/networks.hpp"
#include "vpl/nn.hpp"

using namespace vpl;
using namespace vpl::nn;

TEST_CASE("relu forward") {
  ReLU relu;
  Tensor x({1, 2});
  x[0] = -1;
  x[1] = 2;
  Tensor y = relu.forward(x, true);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("linear with identity weights is the identity map") {
  Rng rng(1);
  Linear lin(4, 4, rng);
  lin.w_.value.fill(0);
  for (int i = 0; i < 4; ++i) lin.w_.value[i * 4 + i] = 1.0;
  lin.b_.value.fill(0);
  Tensor x({2, 4});
  for (long i = 0; i < x.numel(); ++i) x[i] = 0.3 * double(i) - 1;
  Tensor y = lin.forward(x, true);
  for (long i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv backward matches central finite differences on 3x3 input") {
  Rng rng(7);
  Conv2d conv(1, 2, 3, 1, 1, rng);
  Tensor x({1, 1, 3, 3});
  for (auto& v : x.data) v = rng.gaussian();
  Tensor y = conv.forward(x, true);
  Tensor r(y.shape);
  for (auto& v : r.data) v = rng.gaussian();
  for (auto* p : conv.params()) p->zero_grad();
  Tensor gx = conv.backward(r);

  auto loss = [&](const Tensor& xi) {
    Tensor yy = conv.forward(xi, true);
    double s = 0;
    for (long i = 0; i < yy.numel(); ++i) s += r[i] * yy[i];
    return s;
  };
  const double h = 1e-6;
  for (long i = 0; i < x.numel(); ++i) {
    Tensor hi = x, lo = x;
    hi[i] += h;
    lo[i] -= h;
    double fd = (loss(hi) - loss(lo)) / (2 * h);
    CHECK(std::abs(fd - gx[i]) / std::max(std::abs(fd), 1.0) < 1e-4);
  }
}

TEST_CASE("gradient reversal") {
  GradientReversal rev(0.2);
  Tensor x({1, 3});
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  Tensor y = rev.forward(x, true);
  CHECK(y.data == x.data);

  Tensor g({1, 2});
  g[0] = 1;
  g[1] = -2;
  GradientReversal rev2(0.2);
  rev2.forward(Tensor({1, 2}), true);
  Tensor gx = rev2.backward(g);
  CHECK(gx[0] == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(gx[1] == doctest::Approx(0.4).epsilon(1e-12));

  GradientReversal blocked(0.0);
  Tensor gz = blocked.backward(g);
  CHECK(gz[0] == 0.0);
  CHECK(gz[1] == 0.0);

  CHECK_THROWS_AS(GradientReversal(-0.1), Error);
}

TEST_CASE("spectral normalization") {
  SUBCASE("diag(3,1) normalizes to top singular value 1") {
    Tensor w({2, 2});
    w[0] = 3;
    w[3] = 1;
    Rng rng(3);
    Tensor u({2}), v({2});
    u[0] = rng.gaussian();
    u[1] = rng.gaussian();
    double sigma = 0;
    Tensor w_hat = spectral_normalize(w, 2, 2, u, v, 50, &sigma);
    CHECK(sigma == doctest::Approx(3.0).epsilon(1e-3));
    CHECK(w_hat[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(w_hat[3] == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
  }
  SUBCASE("orthogonal matrix is unchanged") {
    double a = 0.7;
    Tensor w({2, 2});
    w[0] = std::cos(a);
    w[1] = -std::sin(a);
    w[2] = std::sin(a);
    w[3] = std::cos(a);
    Tensor u({2}), v({2});
    u[0] = 0.6;
    u[1] = 0.8;
    Tensor w_hat = spectral_normalize(w, 2, 2, u, v, 100);
    for (int i = 0; i < 4; ++i)
      CHECK(std::abs(w_hat[i] - w[i]) < 1e-6);
  }
  SUBCASE("positive scaling of the weight cancels") {
    Rng rng(11);
    Tensor w({3, 4});
    for (auto& x : w.data) x = rng.gaussian();
    Tensor w2 = w;
    for (auto& x : w2.data) x *= 7.5;
    Tensor u1({3}), v1({4}), u2({3}), v2({4});
    u1[0] = u2[0] = 1;
    Tensor a = spectral_normalize(w, 3, 4, u1, v1, 50);
    Tensor b = spectral_normalize(w2, 3, 4, u2, v2, 50);
    for (long i = 0; i < a.numel(); ++i)
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  }
  SUBCASE("zero matrix hits the sigma floor without dividing by zero") {
    Tensor w({2, 2}), u({2}), v({2});
    u[0] = 1;
    double sigma = 0;
    Tensor w_hat = spectral_normalize(w, 2, 2, u, v, 5, &sigma);
    CHECK(sigma == doctest::Approx(1e-12));
    for (long i = 0; i < 4; ++i) CHECK(w_hat[i] == 0.0);
  }
}

TEST_CASE("adam") {
  SUBCASE("10 steps on f(w)=w^2 match an independent scalar trace") {
    AdamParams hp;
    hp.alpha = 0.1;
    Tensor p({1}), m({1}), v({1});
    p[0] = 1.0;
    long t = 0;
    double ref = 1.0, rm = 0, rv = 0;
    for (int k = 1; k <= 10; ++k) {
      Tensor g({1});
      g[0] = 2.0 * p[0];
      double rg = 2.0 * ref;
      adam_step(p, g, m, v, t, hp);
      rm = hp.beta1 * rm + (1 - hp.beta1) * rg;
      rv = hp.beta2 * rv + (1 - hp.beta2) * rg * rg;
      double mh = rm / (1 - std::pow(hp.beta1, k));
      double vh = rv / (1 - std::pow(hp.beta2, k));
      ref -= hp.alpha * mh / (std::sqrt(vh) + hp.eps);
      CHECK(std::abs(p[0] - ref) < 1e-10);
    }
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    Rng rng(5);
    Linear lin(3, 2, rng);
    Tensor before = lin.w_.value;
    Adam opt({&lin.w_, &lin.b_}, {});
    for (int k = 0; k < 5; ++k) {
      lin.w_.zero_grad();
      lin.b_.zero_grad();
      opt.step();
    }
    CHECK(lin.w_.value.data == before.data);
  }
  SUBCASE("first step moves by -alpha * sign(g)") {
    AdamParams hp;
    Tensor p({3}), m({3}), v({3});
    p[0] = 1;
    p[1] = -2;
    p[2] = 0.5;
    Tensor g({3});
    g[0] = 0.3;
    g[1] = -7;
    g[2] = 1e-3;
    long t = 0;
    adam_step(p, g, m, v, t, hp);
    CHECK(p[0] == doctest::Approx(1 - hp.alpha).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(-2 + hp.alpha).epsilon(1e-4));
    CHECK(p[2] == doctest::Approx(0.5 - hp.alpha).epsilon(1e-4));
  }
}

TEST_CASE("finite-difference property suite") {
  auto results = checks::run_nn_checks(123, 60, false);
  for (const auto& r : results) {
    INFO(r.name << " max_err=" << r.max_err << " tol=" << r.tol);
    CHECK(r.pass);
  }
  CHECK(checks::all_pass(results));
}

TEST_CASE("corrupted backward is caught and names the layer") {
  auto results = checks::run_nn_checks(123, 40, true);
  bool conv_failed = false;
  for (const auto& r : results) {
    if (r.name == "nn.conv_fd") conv_failed = !r.pass;
  }
  CHECK(conv_failed);
}

TEST_CASE("encoder") {
  Rng rng(21);
  Encoder enc(4, 64, 0.25, rng);
  Tensor x({2, 4, 64, 64});
  Rng data(99);
  for (auto& v : x.data) v = data.uniform();
  Tensor code = enc.forward(x, false);
  CHECK(code.shape == std::vector<int>{2, 512});

  SUBCASE("identical images give identical codes") {
    for (long i = 0; i < x.numel() / 2; ++i) x[i + x.numel() / 2] = x[i];
    Tensor c2 = enc.forward(x, false);
    for (int d = 0; d < 512; ++d)
      CHECK(c2.at2(0, d) == c2.at2(1, d));
  }
  SUBCASE("shifted image gives a different code") {
    Tensor xs = x;
    for (int c = 0; c < 4; ++c)
      for (int yy = 0; yy < 64; ++yy)
        for (int xx = 0; xx < 64; ++xx)
          xs.at4(0, c, yy, xx) = x.at4(0, c, yy, (xx + 5) % 64);
    Tensor c2 = enc.forward(xs, false);
    double diff = 0;
    for (int d = 0; d < 512; ++d)
      diff = std::max(diff, std::abs(c2.at2(0, d) - code.at2(0, d)));
    CHECK(diff > 1e-8);
  }
  SUBCASE("seeded init is reproducible") {
    Rng rng2(21);
    Encoder enc2(4, 64, 0.25, rng2);
    Tensor c2 = enc2.forward(x, false);
    CHECK(c2.data == code.data);
  }
}

TEST_CASE("shape decoder") {
  Rng rng(31);
  ShapeDecoder dec(0.125, rng);

  SUBCASE("zero weights reproduce the cube template") {
    for (auto* p : dec.params()) p->value.fill(0);
    Tensor latent({1, 512});
    Rng data(1);
    for (auto& v : latent.data) v = data.gaussian();
    auto verts = dec.forward(latent, false);
    REQUIRE(verts.size() == 1);
    CHECK(verts[0].size() == 1352);
    for (std::size_t i = 0; i < verts[0].size(); ++i) {
      CHECK(verts[0][i].x == doctest::Approx(dec.cube().mesh.vertices[i].x));
      CHECK(verts[0][i].y == doctest::Approx(dec.cube().mesh.vertices[i].y));
      CHECK(verts[0][i].z == doctest::Approx(dec.cube().mesh.vertices[i].z));
    }
  }

  SUBCASE("shared edge vertices average the contributing faces") {
    // zero everything, then give each branch's final deconv a distinct bias:
    // every slot of face f then predicts tanh(c_f), so a vertex shared by
    // faces f,g must equal template + 0.5 * mean(tanh(c_f), tanh(c_g))
    for (auto* p : dec.params()) p->value.fill(0);
    double bias[6] = {0.3, -0.4, 0.9, -1.2, 0.05, 0.6};
    for (int f = 0; f < 6; ++f) {
      auto ps = dec.branch(f).params();
      ps[ps.size() - 1]->value.fill(bias[f]);  // final deconv bias
    }
    Tensor latent({1, 512});
    auto verts = dec.forward(latent, false);

    const auto& tmpl = dec.cube();
    std::vector<std::vector<int>> owners(1352);
    for (int f = 0; f < 6; ++f)
      for (int v : tmpl.grid_index[f]) {
        auto& o = owners[v];
        if (std::find(o.begin(), o.end(), f) == o.end()) o.push_back(f);
      }
    for (int v = 0; v < 1352; ++v) {
      double s = 0;
      for (int f : owners[v]) s += std::tanh(bias[f]);
      double expect = 0.5 * s / double(owners[v].size());
      CHECK(verts[0][v].x - tmpl.mesh.vertices[v].x ==
            doctest::Approx(expect).epsilon(1e-12));
      CHECK(verts[0][v].y - tmpl.mesh.vertices[v].y ==
            doctest::Approx(expect).epsilon(1e-12));
    }
  }

  SUBCASE("backward matches finite differences through the merge") {
    Tensor latent({1, 512});
    Rng data(77);
    for (auto& v : latent.data) v = data.gaussian();
    std::vector<std::vector<Vec3>> vg(1, std::vector<Vec3>(1352));
    for (auto& g : vg[0]) g = {data.gaussian(), data.gaussian(), data.gaussian()};

    dec.forward(latent, false);
    for (auto* p : dec.params()) p->zero_grad();
    Tensor gl = dec.backward(vg);

    auto loss = [&](const Tensor& l) {
      auto verts = dec.forward(l, false);
      double s = 0;
      for (int v = 0; v < 1352; ++v)
        s += dot(vg[0][v], verts[0][v]);
      return s;
    };
    const double h = 1e-5;
    Rng pick(5);
    for (int t = 0; t < 20; ++t) {
      long i = long(pick.next_below(512));
      Tensor hi = latent, lo = latent;
      hi[i] += h;
      lo[i] -= h;
      double fd = (loss(hi) - loss(lo)) / (2 * h);
      CHECK(std::abs(fd - gl[i]) / std::max(std::abs(fd), 1.0) < 1e-4);
    }
  }
}

TEST_CASE("texture decoder") {
  Rng rng(41);
  TextureDecoder dec(8, 0.125, rng);
  Tensor latent({2, 512});
  Rng data(3);
  for (auto& v : latent.data) v = data.gaussian();

  auto grids = dec.forward(latent, true);
  REQUIRE(grids.size() == 2);
  for (const auto& per : grids)
    for (const auto& g : per) {
      CHECK(g.size == 8);
      for (double v : g.texels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }

  SUBCASE("zero weights give uniform 0.5 textures") {
    for (auto* p : dec.params()) p->value.fill(0);
    auto g2 = dec.forward(latent, true);
    for (double v : g2[0][3].texels) CHECK(v == doctest::Approx(0.5));
  }

  SUBCASE("texel-sum gradient reaches every parameter") {
    dec.forward(latent, true);
    for (auto* p : dec.params()) p->zero_grad();
    std::vector<std::array<TextureGrid, 6>> tg(2);
    for (auto& per : tg)
      for (auto& g : per) {
        g = TextureGrid(8);
        for (auto& v : g.texels) v = 1.0;
      }
    dec.backward(tg);
    for (auto* p : dec.params()) {
      double mag = 0;
      for (double v : p->grad.data) mag += std::abs(v);
      INFO(p->name);
      CHECK(mag > 0.0);
    }
  }
}

TEST_CASE("discriminator") {
  Rng rng(51);
  Discriminator dis(1, 32, Conditioning::kViewpoint, 0, false, 0.25, rng);
  Tensor img({2, 1, 32, 32});
  Rng data(9);
  for (auto& v : img.data) v = data.uniform();
  Tensor vp = viewpoint_features(
      {Viewpoint::make(30, 10, 2.5), Viewpoint::make(200, -15, 2.5)});
  Tensor logit = dis.forward(img, vp, {}, true);
  CHECK(logit.shape == std::vector<int>{2, 1});

  SUBCASE("viewpoint changes the logit when conditioned") {
    Tensor vp2 = viewpoint_features(
        {Viewpoint::make(150, -10, 2.5), Viewpoint::make(10, 25, 2.5)});
    Tensor l2 = dis.forward(img, vp2, {}, false);
    Tensor l1 = dis.forward(img, vp, {}, false);
    CHECK(std::abs(l1.at2(0, 0) - l2.at2(0, 0)) > 1e-10);
  }

  SUBCASE("conditioning=none ignores the viewpoint exactly") {
    Rng r2(52);
    Discriminator plain(1, 32, Conditioning::kNone, 0, false, 0.25, r2);
    Tensor a = plain.forward(img, Tensor({2, 3}), {}, false);
    Tensor vp2({2, 3});
    vp2.fill(9.0);
    Tensor b = plain.forward(img, vp2, {}, false);
    CHECK(a.data == b.data);
  }

  SUBCASE("image gradient matches finite differences") {
    // run the power iterations to convergence so the spectral-norm gradient
    // is exact, and restore persistent state before every probe forward
    for (int k = 0; k < 400; ++k) dis.forward(img, vp, {}, true);
    std::vector<Tensor> st;
    for (auto* p : dis.state()) st.push_back(p->value);
    auto restore = [&] {
      auto states = dis.state();
      for (std::size_t i = 0; i < states.size(); ++i) states[i]->value = st[i];
    };
    Tensor l = dis.forward(img, vp, {}, true);
    Tensor gl({2, 1});
    gl[0] = 0.7;
    gl[1] = -1.3;
    for (auto* p : dis.params()) p->zero_grad();
    Tensor gimg = dis.backward(gl);
    auto loss = [&](const Tensor& x) {
      restore();
      Tensor y = dis.forward(x, vp, {}, true);
      return gl[0] * y[0] + gl[1] * y[1];
    };
    const double h = 1e-5;
    Rng pick(6);
    for (int t = 0; t < 15; ++t) {
      long i = long(pick.next_below(std::uint64_t(img.numel())));
      Tensor hi = img, lo = img;
      hi[i] += h;
      lo[i] -= h;
      double fd = (loss(hi) - loss(lo)) / (2 * h);
      CHECK(std::abs(fd - gimg[i]) / std::max(std::abs(fd), 1.0) < 1e-4);
    }
  }

  SUBCASE("spectral norms stay near 1 after warm-up") {
    for (int k = 0; k < 30; ++k) dis.forward(img, vp, {}, true);
    for (double s : dis.audit_spectral_norms(50)) {
      CHECK(s > 0.9);
      CHECK(s < 1.1);
    }
  }
}

TEST_CASE("class-conditional projection discriminator") {
  Rng rng(61);
  Discriminator dis(1, 16, Conditioning::kViewpointClass, 4, false, 0.25, rng);
  Tensor img({2, 1, 16, 16});
  Rng data(8);
  for (auto& v : img.data) v = data.uniform();
  Tensor vp = viewpoint_features(
      {Viewpoint::make(0, 0, 2.5), Viewpoint::make(90, 10, 2.5)});

  Tensor a = dis.forward(img, vp, {0, 1}, false);
  Tensor b = dis.forward(img, vp, {2, 1}, false);
  CHECK(std::abs(a.at2(0, 0) - b.at2(0, 0)) > 1e-12);  // label matters
  CHECK(a.at2(1, 0) == b.at2(1, 0));

  CHECK_THROWS_AS(dis.forward(img, vp, {0, 9}, false), Error);

  SUBCASE("embedding receives gradient") {
    dis.forward(img, vp, {3, 1}, true);
    for (auto* p : dis.params()) p->zero_grad();
    Tensor gl({2, 1});
    gl[0] = 1;
    gl[1] = 1;
    dis.backward(gl);
    auto ps = dis.params();
    Param* embed = ps.back();
    double mag = 0;
    for (double v : embed->grad.data) mag += std::abs(v);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("checkpoint round trip") {
  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "vpl_test_ckpt.bin";

  Rng rng(71);
  Linear lin(6, 5, rng, true);
  Tensor misc({3});
  misc[0] = 0.1234567890123;
  misc[1] = -7;
  misc[2] = 1e-20;

  std::vector<CheckpointBlock> blocks{
      {"lin.w", &lin.w_.value}, {"lin.b", &lin.b_.value},
      {"lin.u", &lin.u_.value}, {"lin.v", &lin.v_.value},
      {"misc", &misc}};
  nlohmann::json header{{"seed", 71}, {"step", 42}};
  save_checkpoint(path.string(), header, blocks);

  // saving rounds live values through float32
  CHECK(misc[0] == double(float(0.1234567890123)));
  Tensor w_after = lin.w_.value;

  for (auto& b : blocks)
    for (auto& v : b.tensor->data) v = 99.0;
  auto loaded = load_checkpoint(path.string(), blocks);
  CHECK(loaded.at("step").get<int>() == 42);
  CHECK(lin.w_.value.data == w_after.data);
  CHECK(misc[1] == -7.0);

  SUBCASE("block mismatch is rejected") {
    std::vector<CheckpointBlock> wrong{{"lin.w", &lin.w_.value}};
    CHECK_THROWS_AS(load_checkpoint(path.string(), wrong), Error);
  }
  SUBCASE("garbage file is rejected") {
    fs::path bad = fs::temp_directory_path() / "vpl_test_bad.bin";
    std::ofstream(bad) << "not a checkpoint at all";
    CHECK_THROWS_AS(read_checkpoint_header(bad.string()), Error);
    fs::remove(bad);
  }
  fs::remove(path);
}
