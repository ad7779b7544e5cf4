#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vpl/tensor.hpp"

namespace vpl::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() {
    grad.shape = value.shape;
    grad.data.assign(value.data.size(), 0.0);
  }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& gy) = 0;
  virtual std::vector<Param*> params() { return {}; }
  // persistent non-trained buffers (running stats, power-iteration vectors)
  virtual std::vector<Param*> state() { return {}; }
  virtual std::string kind() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

class Linear : public Layer {
 public:
  Linear(int in, int out, Rng& rng, bool spectral_norm = false);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::vector<Param*> state() override;
  std::string kind() const override { return "linear"; }

  Param w_, b_;  // w: (out, in)
  bool sn_ = false;
  Param u_, v_;  // power-iteration vectors when sn_
  int sn_iters_ = 1;

 private:
  int in_, out_;
  Tensor x_, w_hat_;
  double sigma_ = 1;
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng,
         bool spectral_norm = false);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::vector<Param*> state() override;
  std::string kind() const override { return "conv"; }

  Param w_, b_;  // w: (out, in, k, k)
  bool sn_ = false;
  Param u_, v_;
  int sn_iters_ = 1;

 private:
  int in_ch_, out_ch_, k_, s_, p_;
  Tensor x_, w_hat_;
  double sigma_ = 1;
};

class Deconv2d : public Layer {
 public:
  Deconv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  std::string kind() const override { return "deconv"; }

  Param w_, b_;  // w: (in, out, k, k)

 private:
  int in_ch_, out_ch_, k_, s_, p_;
  Tensor x_;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<Param*> state() override { return {&run_mean_, &run_var_}; }
  std::string kind() const override { return "batchnorm"; }

  Param gamma_, beta_, run_mean_, run_var_;

 private:
  int ch_;
  double eps_ = 1e-5, momentum_ = 0.9;
  bool train_mode_ = true;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "relu"; }

 private:
  Tensor x_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "leaky_relu"; }

 private:
  double slope_;
  Tensor x_;
};

class Tanh : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "tanh"; }

 private:
  Tensor y_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "sigmoid"; }

 private:
  Tensor y_;
};

// (N, c*h*w) -> (N, c, h, w)
class Reshape : public Layer {
 public:
  Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "reshape"; }

 private:
  int c_, h_, w_;
  std::vector<int> in_shape_;
};

// (N, C, H, W) -> (N, C*H*W)
class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "flatten"; }

 private:
  std::vector<int> in_shape_;
};

// (N, C) -> (N, C, a, a)
class Tile : public Layer {
 public:
  explicit Tile(int a) : a_(a) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "tile"; }

 private:
  int a_;
};

class GlobalPool : public Layer {
 public:
  enum Mode { kMean, kSum };
  explicit GlobalPool(Mode m) : mode_(m) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "global_pool"; }

 private:
  Mode mode_;
  std::vector<int> in_shape_;
};

// forward(x) = x; backward(g) = -lambda * g
class GradientReversal : public Layer {
 public:
  explicit GradientReversal(double lambda) : lambda_(lambda) {
    if (lambda < 0) throw Error("gradient_reversal: lambda must be >= 0");
  }
  Tensor forward(const Tensor& x, bool) override { return x; }
  Tensor backward(const Tensor& gy) override;
  std::string kind() const override { return "gradient_reversal"; }
  double lambda() const { return lambda_; }
  void set_lambda(double l) { lambda_ = l; }

 private:
  double lambda_;
};

class Sequential {
 public:
  Sequential() = default;
  void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& gy);
  std::vector<Param*> params();
  std::vector<Param*> state();
  Layer& layer(std::size_t i) { return *layers_[i]; }
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<LayerPtr> layers_;
};

// Normalizes `w` (viewed as rows x cols) by its estimated top singular value,
// running `iters` power iterations that update the persistent u, v in place.
// Standalone entry point; Linear/Conv use it internally.
Tensor spectral_normalize(const Tensor& w, int rows, int cols, Tensor& u,
                          Tensor& v, int iters, double* sigma_out = nullptr);

// Gradient wrt the raw weight of w_hat = w / sigma, sigma = u^T w v.
Tensor spectral_norm_backward(const Tensor& g_hat, const Tensor& w_hat,
                              const Tensor& u, const Tensor& v, double sigma,
                              int rows, int cols);

struct AdamParams {
  double alpha = 4e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamParams hp);
  void step();
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
  AdamParams hp_;
};

// Single-tensor convenience used by oracle tests.
void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
               long& t, const AdamParams& hp);

void he_init(Tensor& w, int fan_in, Rng& rng);

}  // namespace vpl::nn
