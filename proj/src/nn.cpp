#include "vpl/nn.hpp"

#include <cmath>

namespace vpl::nn {

void he_init(Tensor& w, int fan_in, Rng& rng) {
  double std = std::sqrt(2.0 / fan_in);
  for (auto& v : w.data) v = rng.gaussian() * std;
}

Tensor spectral_normalize(const Tensor& w, int rows, int cols, Tensor& u,
                          Tensor& v, int iters, double* sigma_out) {
  if (long(rows) * cols != w.numel())
    throw Error("spectral_normalize: rows*cols does not match weight size");
  if (iters < 1) throw Error("spectral_normalize: iters must be >= 1");
  auto normalize_vec = [](Tensor& t) {
    double n = 0;
    for (double x : t.data) n += x * x;
    n = std::sqrt(std::max(n, 1e-24));
    for (double& x : t.data) x /= n;
  };
  for (int it = 0; it < iters; ++it) {
    // v = normalize(W^T u)
    for (int c = 0; c < cols; ++c) {
      double s = 0;
      for (int r = 0; r < rows; ++r) s += w[long(r) * cols + c] * u[r];
      v[c] = s;
    }
    normalize_vec(v);
    // u = normalize(W v)
    for (int r = 0; r < rows; ++r) {
      double s = 0;
      for (int c = 0; c < cols; ++c) s += w[long(r) * cols + c] * v[c];
      u[r] = s;
    }
    normalize_vec(u);
  }
  double sigma = 0;
  for (int r = 0; r < rows; ++r) {
    double s = 0;
    for (int c = 0; c < cols; ++c) s += w[long(r) * cols + c] * v[c];
    sigma += u[r] * s;
  }
  sigma = std::max(sigma, 1e-12);  // zero-matrix floor
  if (sigma_out) *sigma_out = sigma;
  Tensor out = w;
  for (auto& x : out.data) x /= sigma;
  return out;
}

Tensor spectral_norm_backward(const Tensor& g_hat, const Tensor& w_hat,
                              const Tensor& u, const Tensor& v, double sigma,
                              int rows, int cols) {
  double inner = 0;
  for (long i = 0; i < g_hat.numel(); ++i) inner += g_hat[i] * w_hat[i];
  Tensor g(w_hat.shape);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      long i = long(r) * cols + c;
      g[i] = (g_hat[i] - inner * u[r] * v[c]) / sigma;
    }
  return g;
}

namespace {

void init_sn_vectors(Param& u, Param& v, int rows, int cols, Rng& rng) {
  u.name = "sn_u";
  v.name = "sn_v";
  u.value = Tensor({rows});
  v.value = Tensor({cols});
  double n = 0;
  for (auto& x : u.value.data) {
    x = rng.gaussian();
    n += x * x;
  }
  n = std::sqrt(std::max(n, 1e-24));
  for (auto& x : u.value.data) x /= n;
  v.value.fill(0);
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(int in, int out, Rng& rng, bool spectral_norm)
    : sn_(spectral_norm), in_(in), out_(out) {
  if (out < 1) throw Error("linear: output size must be >= 1");
  w_.name = "w";
  w_.value = Tensor({out, in});
  he_init(w_.value, in, rng);
  b_.name = "b";
  b_.value = Tensor({out});
  if (sn_) init_sn_vectors(u_, v_, out, in, rng);
}

std::vector<Param*> Linear::state() {
  if (!sn_) return {};
  return {&u_, &v_};
}

Tensor Linear::forward(const Tensor& x, bool train) {
  if (x.shape.size() != 2 || x.shape[1] != in_)
    throw Error("linear: expected (N," + std::to_string(in_) + "), got " +
                x.shape_str());
  x_ = x;
  const Tensor* w = &w_.value;
  if (sn_) {
    if (train) {
      w_hat_ = spectral_normalize(w_.value, out_, in_, u_.value, v_.value,
                                  sn_iters_, &sigma_);
    } else {
      Tensor u = u_.value, v = v_.value;  // eval must not mutate state
      w_hat_ = spectral_normalize(w_.value, out_, in_, u, v, 1, &sigma_);
    }
    w = &w_hat_;
  }
  int n = x.shape[0];
  Tensor y({n, out_});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out_; ++o) {
      double s = b_.value[o];
      const double* wr = w->data.data() + long(o) * in_;
      const double* xr = x.data.data() + long(i) * in_;
      for (int j = 0; j < in_; ++j) s += wr[j] * xr[j];
      y.at2(i, o) = s;
    }
  return y;
}

Tensor Linear::backward(const Tensor& gy) {
  int n = x_.shape[0];
  if (gy.shape != std::vector<int>{n, out_})
    throw Error("linear backward: bad upstream shape " + gy.shape_str());
  const Tensor& w = sn_ ? w_hat_ : w_.value;
  Tensor gw_used({out_, in_});
  if (b_.grad.numel() == 0) b_.zero_grad();
  if (w_.grad.numel() == 0) w_.zero_grad();
  Tensor gx({n, in_});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out_; ++o) {
      double g = gy.at2(i, o);
      b_.grad[o] += g;
      const double* xr = x_.data.data() + long(i) * in_;
      const double* wr = w.data.data() + long(o) * in_;
      double* gwr = gw_used.data.data() + long(o) * in_;
      double* gxr = gx.data.data() + long(i) * in_;
      for (int j = 0; j < in_; ++j) {
        gwr[j] += g * xr[j];
        gxr[j] += g * wr[j];
      }
    }
  if (sn_) {
    Tensor graw = spectral_norm_backward(gw_used, w_hat_, u_.value, v_.value, sigma_,
                              out_, in_);
    for (long i = 0; i < graw.numel(); ++i) w_.grad[i] += graw[i];
  } else {
    for (long i = 0; i < gw_used.numel(); ++i) w_.grad[i] += gw_used[i];
  }
  return gx;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad,
               Rng& rng, bool spectral_norm)
    : sn_(spectral_norm),
      in_ch_(in_ch),
      out_ch_(out_ch),
      k_(kernel),
      s_(stride),
      p_(pad) {
  if (kernel < 1 || stride < 1)
    throw Error("conv: kernel and stride must be >= 1");
  w_.name = "w";
  w_.value = Tensor({out_ch, in_ch, kernel, kernel});
  he_init(w_.value, in_ch * kernel * kernel, rng);
  b_.name = "b";
  b_.value = Tensor({out_ch});
  if (sn_) init_sn_vectors(u_, v_, out_ch, in_ch * kernel * kernel, rng);
}

std::vector<Param*> Conv2d::state() {
  if (!sn_) return {};
  return {&u_, &v_};
}

Tensor Conv2d::forward(const Tensor& x, bool train) {
  if (x.shape.size() != 4 || x.shape[1] != in_ch_)
    throw Error("conv: expected (N," + std::to_string(in_ch_) +
                ",H,W), got " + x.shape_str());
  x_ = x;
  const Tensor* w = &w_.value;
  if (sn_) {
    if (train) {
      w_hat_ = spectral_normalize(w_.value, out_ch_, in_ch_ * k_ * k_,
                                  u_.value, v_.value, sn_iters_, &sigma_);
    } else {
      Tensor u = u_.value, v = v_.value;
      w_hat_ = spectral_normalize(w_.value, out_ch_, in_ch_ * k_ * k_, u, v, 1,
                                  &sigma_);
    }
    w = &w_hat_;
  }
  int n = x.shape[0], h = x.shape[2], wd = x.shape[3];
  int oh = (h + 2 * p_ - k_) / s_ + 1, ow = (wd + 2 * p_ - k_) / s_ + 1;
  if (oh < 1 || ow < 1)
    throw Error("conv: input " + x.shape_str() + " too small for kernel");
  Tensor y({n, out_ch_, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int oc = 0; oc < out_ch_; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = b_.value[oc];
          for (int ic = 0; ic < in_ch_; ++ic)
            for (int ky = 0; ky < k_; ++ky) {
              int iy = oy * s_ - p_ + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                int ix = ox * s_ - p_ + kx;
                if (ix < 0 || ix >= wd) continue;
                s += x.at4(i, ic, iy, ix) *
                     w->data[((long(oc) * in_ch_ + ic) * k_ + ky) * k_ + kx];
              }
            }
          y.at4(i, oc, oy, ox) = s;
        }
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  int n = x_.shape[0], h = x_.shape[2], wd = x_.shape[3];
  int oh = gy.shape[2], ow = gy.shape[3];
  if (gy.shape[0] != n || gy.shape[1] != out_ch_)
    throw Error("conv backward: bad upstream shape " + gy.shape_str());
  const Tensor& w = sn_ ? w_hat_ : w_.value;
  if (w_.grad.numel() == 0) w_.zero_grad();
  if (b_.grad.numel() == 0) b_.zero_grad();
  Tensor gw_used(w_.value.shape);
  Tensor gx(x_.shape);
  for (int i = 0; i < n; ++i)
    for (int oc = 0; oc < out_ch_; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double g = gy.at4(i, oc, oy, ox);
          if (g == 0.0) continue;
          b_.grad[oc] += g;
          for (int ic = 0; ic < in_ch_; ++ic)
            for (int ky = 0; ky < k_; ++ky) {
              int iy = oy * s_ - p_ + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                int ix = ox * s_ - p_ + kx;
                if (ix < 0 || ix >= wd) continue;
                long wi = ((long(oc) * in_ch_ + ic) * k_ + ky) * k_ + kx;
                gw_used[wi] += g * x_.at4(i, ic, iy, ix);
                gx.at4(i, ic, iy, ix) += g * w.data[wi];
              }
            }
        }
  if (sn_) {
    Tensor graw = spectral_norm_backward(gw_used, w_hat_, u_.value, v_.value, sigma_,
                              out_ch_, in_ch_ * k_ * k_);
    for (long i = 0; i < graw.numel(); ++i) w_.grad[i] += graw[i];
  } else {
    for (long i = 0; i < gw_used.numel(); ++i) w_.grad[i] += gw_used[i];
  }
  return gx;
}

// ---------------------------------------------------------------- Deconv2d

Deconv2d::Deconv2d(int in_ch, int out_ch, int kernel, int stride, int pad,
                   Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), s_(stride), p_(pad) {
  if (kernel < 1 || stride < 1)
    throw Error("deconv: kernel and stride must be >= 1");
  w_.name = "w";
  w_.value = Tensor({in_ch, out_ch, kernel, kernel});
  he_init(w_.value, in_ch * kernel * kernel, rng);
  b_.name = "b";
  b_.value = Tensor({out_ch});
}

Tensor Deconv2d::forward(const Tensor& x, bool) {
  if (x.shape.size() != 4 || x.shape[1] != in_ch_)
    throw Error("deconv: expected (N," + std::to_string(in_ch_) +
                ",H,W), got " + x.shape_str());
  x_ = x;
  int n = x.shape[0], h = x.shape[2], wd = x.shape[3];
  int oh = (h - 1) * s_ - 2 * p_ + k_, ow = (wd - 1) * s_ - 2 * p_ + k_;
  Tensor y({n, out_ch_, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int oc = 0; oc < out_ch_; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) y.at4(i, oc, oy, ox) = b_.value[oc];
  for (int i = 0; i < n; ++i)
    for (int ic = 0; ic < in_ch_; ++ic)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < wd; ++ix) {
          double xv = x.at4(i, ic, iy, ix);
          if (xv == 0.0) continue;
          for (int oc = 0; oc < out_ch_; ++oc)
            for (int ky = 0; ky < k_; ++ky) {
              int oy = iy * s_ - p_ + ky;
              if (oy < 0 || oy >= oh) continue;
              for (int kx = 0; kx < k_; ++kx) {
                int ox = ix * s_ - p_ + kx;
                if (ox < 0 || ox >= ow) continue;
                y.at4(i, oc, oy, ox) +=
                    xv * w_.value[((long(ic) * out_ch_ + oc) * k_ + ky) * k_ +
                                  kx];
              }
            }
        }
  return y;
}

Tensor Deconv2d::backward(const Tensor& gy) {
  int n = x_.shape[0], h = x_.shape[2], wd = x_.shape[3];
  int oh = gy.shape[2], ow = gy.shape[3];
  if (gy.shape[0] != n || gy.shape[1] != out_ch_)
    throw Error("deconv backward: bad upstream shape " + gy.shape_str());
  if (w_.grad.numel() == 0) w_.zero_grad();
  if (b_.grad.numel() == 0) b_.zero_grad();
  Tensor gx(x_.shape);
  for (int i = 0; i < n; ++i)
    for (int oc = 0; oc < out_ch_; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) b_.grad[oc] += gy.at4(i, oc, oy, ox);
  for (int i = 0; i < n; ++i)
    for (int ic = 0; ic < in_ch_; ++ic)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < wd; ++ix) {
          double acc = 0;
          double xv = x_.at4(i, ic, iy, ix);
          for (int oc = 0; oc < out_ch_; ++oc)
            for (int ky = 0; ky < k_; ++ky) {
              int oy = iy * s_ - p_ + ky;
              if (oy < 0 || oy >= oh) continue;
              for (int kx = 0; kx < k_; ++kx) {
                int ox = ix * s_ - p_ + kx;
                if (ox < 0 || ox >= ow) continue;
                long wi = ((long(ic) * out_ch_ + oc) * k_ + ky) * k_ + kx;
                double g = gy.at4(i, oc, oy, ox);
                acc += g * w_.value[wi];
                w_.grad[wi] += g * xv;
              }
            }
          gx.at4(i, ic, iy, ix) = acc;
        }
  return gx;
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels) : ch_(channels) {
  gamma_.name = "gamma";
  gamma_.value = Tensor({channels});
  gamma_.value.fill(1.0);
  beta_.name = "beta";
  beta_.value = Tensor({channels});
  run_mean_.name = "run_mean";
  run_mean_.value = Tensor({channels});
  run_var_.name = "run_var";
  run_var_.value = Tensor({channels});
  run_var_.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  if (x.shape.size() != 4 || x.shape[1] != ch_)
    throw Error("batchnorm: expected (N," + std::to_string(ch_) +
                ",H,W), got " + x.shape_str());
  train_mode_ = train;
  int n = x.shape[0], h = x.shape[2], w = x.shape[3];
  long m = long(n) * h * w;
  Tensor y(x.shape);
  xhat_ = Tensor(x.shape);
  inv_std_.assign(ch_, 0.0);
  for (int c = 0; c < ch_; ++c) {
    double mean, var;
    if (train) {
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i)
        for (int iy = 0; iy < h; ++iy)
          for (int ix = 0; ix < w; ++ix) {
            double v = x.at4(i, c, iy, ix);
            s += v;
            s2 += v * v;
          }
      mean = s / m;
      var = s2 / m - mean * mean;
      if (var < 0) var = 0;
      run_mean_.value[c] = momentum_ * run_mean_.value[c] + (1 - momentum_) * mean;
      run_var_.value[c] = momentum_ * run_var_.value[c] + (1 - momentum_) * var;
    } else {
      mean = run_mean_.value[c];
      var = run_var_.value[c];
    }
    double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    for (int i = 0; i < n; ++i)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          double xh = (x.at4(i, c, iy, ix) - mean) * inv;
          xhat_.at4(i, c, iy, ix) = xh;
          y.at4(i, c, iy, ix) = gamma_.value[c] * xh + beta_.value[c];
        }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& gy) {
  check_same_shape(gy, xhat_, "batchnorm backward");
  int n = gy.shape[0], h = gy.shape[2], w = gy.shape[3];
  long m = long(n) * h * w;
  if (gamma_.grad.numel() == 0) gamma_.zero_grad();
  if (beta_.grad.numel() == 0) beta_.zero_grad();
  Tensor gx(gy.shape);
  for (int c = 0; c < ch_; ++c) {
    double sum_gy = 0, sum_gy_xh = 0;
    for (int i = 0; i < n; ++i)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          double g = gy.at4(i, c, iy, ix);
          sum_gy += g;
          sum_gy_xh += g * xhat_.at4(i, c, iy, ix);
        }
    gamma_.grad[c] += sum_gy_xh;
    beta_.grad[c] += sum_gy;
    double gscale = gamma_.value[c] * inv_std_[c];
    for (int i = 0; i < n; ++i)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          double g = gy.at4(i, c, iy, ix);
          if (train_mode_) {
            gx.at4(i, c, iy, ix) =
                gscale * (g - sum_gy / m -
                          xhat_.at4(i, c, iy, ix) * sum_gy_xh / m);
          } else {
            gx.at4(i, c, iy, ix) = gscale * g;
          }
        }
  }
  return gx;
}

// ---------------------------------------------------------------- pointwise

Tensor ReLU::forward(const Tensor& x, bool) {
  x_ = x;
  Tensor y = x;
  for (auto& v : y.data) v = v > 0 ? v : 0;
  return y;
}
Tensor ReLU::backward(const Tensor& gy) {
  check_same_shape(gy, x_, "relu backward");
  Tensor gx = gy;
  for (long i = 0; i < gx.numel(); ++i)
    if (x_[i] <= 0) gx[i] = 0;
  return gx;
}

Tensor LeakyReLU::forward(const Tensor& x, bool) {
  x_ = x;
  Tensor y = x;
  for (auto& v : y.data) v = v > 0 ? v : slope_ * v;
  return y;
}
Tensor LeakyReLU::backward(const Tensor& gy) {
  check_same_shape(gy, x_, "leaky_relu backward");
  Tensor gx = gy;
  for (long i = 0; i < gx.numel(); ++i)
    if (x_[i] <= 0) gx[i] *= slope_;
  return gx;
}

Tensor Tanh::forward(const Tensor& x, bool) {
  y_ = x;
  for (auto& v : y_.data) v = std::tanh(v);
  return y_;
}
Tensor Tanh::backward(const Tensor& gy) {
  check_same_shape(gy, y_, "tanh backward");
  Tensor gx = gy;
  for (long i = 0; i < gx.numel(); ++i) gx[i] *= 1.0 - y_[i] * y_[i];
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x, bool) {
  y_ = x;
  for (auto& v : y_.data) v = 1.0 / (1.0 + std::exp(-v));
  return y_;
}
Tensor Sigmoid::backward(const Tensor& gy) {
  check_same_shape(gy, y_, "sigmoid backward");
  Tensor gx = gy;
  for (long i = 0; i < gx.numel(); ++i) gx[i] *= y_[i] * (1.0 - y_[i]);
  return gx;
}

Tensor Reshape::forward(const Tensor& x, bool) {
  if (x.shape.size() != 2 || x.shape[1] != c_ * h_ * w_)
    throw Error("reshape: expected (N," + std::to_string(c_ * h_ * w_) +
                "), got " + x.shape_str());
  in_shape_ = x.shape;
  Tensor y = x;
  y.shape = {x.shape[0], c_, h_, w_};
  return y;
}
Tensor Reshape::backward(const Tensor& gy) {
  Tensor gx = gy;
  gx.shape = in_shape_;
  return gx;
}

Tensor Flatten::forward(const Tensor& x, bool) {
  if (x.shape.size() != 4) throw Error("flatten: expected 4D input");
  in_shape_ = x.shape;
  Tensor y = x;
  y.shape = {x.shape[0], x.shape[1] * x.shape[2] * x.shape[3]};
  return y;
}
Tensor Flatten::backward(const Tensor& gy) {
  Tensor gx = gy;
  gx.shape = in_shape_;
  return gx;
}

Tensor Tile::forward(const Tensor& x, bool) {
  if (x.shape.size() != 2) throw Error("tile: expected (N,C) input");
  int n = x.shape[0], c = x.shape[1];
  Tensor y({n, c, a_, a_});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double v = x.at2(i, j);
      for (int iy = 0; iy < a_; ++iy)
        for (int ix = 0; ix < a_; ++ix) y.at4(i, j, iy, ix) = v;
    }
  return y;
}
Tensor Tile::backward(const Tensor& gy) {
  int n = gy.shape[0], c = gy.shape[1];
  Tensor gx({n, c});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double s = 0;
      for (int iy = 0; iy < a_; ++iy)
        for (int ix = 0; ix < a_; ++ix) s += gy.at4(i, j, iy, ix);
      gx.at2(i, j) = s;
    }
  return gx;
}

Tensor GlobalPool::forward(const Tensor& x, bool) {
  if (x.shape.size() != 4) throw Error("global_pool: expected 4D input");
  in_shape_ = x.shape;
  int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor y({n, c});
  double scale = mode_ == kMean ? 1.0 / (double(h) * w) : 1.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double s = 0;
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) s += x.at4(i, j, iy, ix);
      y.at2(i, j) = s * scale;
    }
  return y;
}
Tensor GlobalPool::backward(const Tensor& gy) {
  int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  Tensor gx(in_shape_);
  double scale = mode_ == kMean ? 1.0 / (double(h) * w) : 1.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double g = gy.at2(i, j) * scale;
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) gx.at4(i, j, iy, ix) = g;
    }
  return gx;
}

Tensor GradientReversal::backward(const Tensor& gy) {
  Tensor gx = gy;
  for (auto& v : gx.data) v = -lambda_ * v;
  return gx;
}

// ---------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor y = x;
  for (auto& l : layers_) y = l->forward(y, train);
  return y;
}
Tensor Sequential::backward(const Tensor& gy) {
  Tensor g = gy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    g = (*it)->backward(g);
  return g;
}
std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (auto* p : l->params()) out.push_back(p);
  return out;
}
std::vector<Param*> Sequential::state() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (auto* p : l->state()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Param*> params, AdamParams hp)
    : params_(std::move(params)), hp_(hp) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(hp_.beta1, double(t_));
  double bc2 = 1.0 - std::pow(hp_.beta2, double(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param* p = params_[k];
    if (p->grad.numel() == 0) p->zero_grad();
    for (long i = 0; i < p->value.numel(); ++i) {
      double g = p->grad[i];
      m_[k][i] = hp_.beta1 * m_[k][i] + (1 - hp_.beta1) * g;
      v_[k][i] = hp_.beta2 * v_[k][i] + (1 - hp_.beta2) * g * g;
      double mhat = m_[k][i] / bc1, vhat = v_[k][i] / bc2;
      p->value[i] -= hp_.alpha * mhat / (std::sqrt(vhat) + hp_.eps);
    }
  }
}

void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
               long& t, const AdamParams& hp) {
  check_same_shape(param, grad, "adam_step");
  ++t;
  double bc1 = 1.0 - std::pow(hp.beta1, double(t));
  double bc2 = 1.0 - std::pow(hp.beta2, double(t));
  for (long i = 0; i < param.numel(); ++i) {
    double g = grad[i];
    m[i] = hp.beta1 * m[i] + (1 - hp.beta1) * g;
    v[i] = hp.beta2 * v[i] + (1 - hp.beta2) * g * g;
    param[i] -= hp.alpha * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + hp.eps);
  }
}

}  // namespace vpl::nn
