#include "vpl/networks.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace vpl::nn {

namespace {

int base_channels(double scale) {
  if (scale <= 0) throw Error("network scale must be > 0");
  return std::max(2, int(std::lround(16 * scale)));
}

bool power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

}  // namespace

// ------------------------------------------------------------------ Encoder

Encoder::Encoder(int in_channels, int image_size, double scale, Rng& rng) {
  if (!power_of_two(image_size) || image_size < 8)
    throw Error("encoder: image size must be a power of two >= 8");
  int b = base_channels(scale);
  int c_in = in_channels, c_out = b, s = image_size;
  while (s > 4) {
    seq_.add(std::make_unique<Conv2d>(c_in, c_out, 4, 2, 1, rng));
    seq_.add(std::make_unique<LeakyReLU>(0.2));
    c_in = c_out;
    c_out = std::min(8 * b, 2 * c_out);
    s /= 2;
  }
  seq_.add(std::make_unique<Flatten>());
  seq_.add(std::make_unique<Linear>(c_in * s * s, 512, rng));
}

// ------------------------------------------------------------- ShapeDecoder

ShapeDecoder::ShapeDecoder(double scale, Rng& rng) {
  tmpl_ = make_cube_template();
  slot_count_.assign(CubeTemplate::kVertexCount, 0);
  for (int f = 0; f < 6; ++f)
    for (int v : tmpl_.grid_index[f]) ++slot_count_[v];

  int c = base_channels(scale);
  for (int f = 0; f < 6; ++f) {
    auto& br = branch_[f];
    br.add(std::make_unique<Linear>(512, 8 * c * 2 * 2, rng));
    br.add(std::make_unique<ReLU>());
    br.add(std::make_unique<Reshape>(8 * c, 2, 2));
    br.add(std::make_unique<Deconv2d>(8 * c, 4 * c, 4, 2, 1, rng));
    br.add(std::make_unique<ReLU>());
    br.add(std::make_unique<Deconv2d>(4 * c, 2 * c, 4, 2, 1, rng));
    br.add(std::make_unique<ReLU>());
    br.add(std::make_unique<Deconv2d>(2 * c, 3, 4, 2, 1, rng));
    br.add(std::make_unique<Tanh>());
  }
}

std::vector<std::vector<Vec3>> ShapeDecoder::forward(const Tensor& latent,
                                                     bool train) {
  if (latent.shape.size() != 2 || latent.shape[1] != 512)
    throw Error("shape decoder: expected (N,512), got " + latent.shape_str());
  const int g = CubeTemplate::kGrid;
  batch_ = latent.shape[0];
  std::vector<std::vector<Vec3>> verts(
      batch_, std::vector<Vec3>(CubeTemplate::kVertexCount));
  std::vector<Vec3> offset(CubeTemplate::kVertexCount);
  for (int f = 0; f < 6; ++f) out_cache_[f] = branch_[f].forward(latent, train);
  for (int n = 0; n < batch_; ++n) {
    for (auto& o : offset) o = {0, 0, 0};
    for (int f = 0; f < 6; ++f)
      for (int j = 0; j < g; ++j)
        for (int i = 0; i < g; ++i) {
          int vi = tmpl_.grid_index[f][j * g + i];
          double w = 0.5 / slot_count_[vi];
          offset[vi].x += w * out_cache_[f].at4(n, 0, j, i);
          offset[vi].y += w * out_cache_[f].at4(n, 1, j, i);
          offset[vi].z += w * out_cache_[f].at4(n, 2, j, i);
        }
    for (int v = 0; v < CubeTemplate::kVertexCount; ++v)
      verts[n][v] = tmpl_.mesh.vertices[v] + offset[v];
  }
  return verts;
}

Tensor ShapeDecoder::backward(
    const std::vector<std::vector<Vec3>>& vertex_grads) {
  if (int(vertex_grads.size()) != batch_)
    throw Error("shape decoder backward: batch mismatch");
  const int g = CubeTemplate::kGrid;
  Tensor glatent({batch_, 512});
  for (int f = 0; f < 6; ++f) {
    Tensor gy({batch_, 3, g, g});
    for (int n = 0; n < batch_; ++n)
      for (int j = 0; j < g; ++j)
        for (int i = 0; i < g; ++i) {
          int vi = tmpl_.grid_index[f][j * g + i];
          double w = 0.5 / slot_count_[vi];
          const Vec3& gv = vertex_grads[n][vi];
          gy.at4(n, 0, j, i) = w * gv.x;
          gy.at4(n, 1, j, i) = w * gv.y;
          gy.at4(n, 2, j, i) = w * gv.z;
        }
    Tensor gl = branch_[f].backward(gy);
    for (long i = 0; i < gl.numel(); ++i) glatent[i] += gl[i];
  }
  return glatent;
}

std::vector<Param*> ShapeDecoder::params() {
  std::vector<Param*> out;
  for (auto& br : branch_)
    for (auto* p : br.params()) out.push_back(p);
  return out;
}

std::vector<Param*> ShapeDecoder::state() {
  std::vector<Param*> out;
  for (auto& br : branch_)
    for (auto* p : br.state()) out.push_back(p);
  return out;
}

Mesh ShapeDecoder::mesh_for(const std::vector<Vec3>& vertices) const {
  Mesh m = tmpl_.mesh;
  m.vertices = vertices;
  return m;
}

// ----------------------------------------------------------- TextureDecoder

TextureDecoder::TextureDecoder(int texture_size, double scale, Rng& rng)
    : t_(texture_size) {
  if (!power_of_two(texture_size) || texture_size < 4)
    throw Error("texture decoder: size must be a power of two >= 4");
  int c = base_channels(scale);
  for (int f = 0; f < 6; ++f) {
    auto& br = branch_[f];
    br.add(std::make_unique<Linear>(512, 8 * c * 2 * 2, rng));
    br.add(std::make_unique<Reshape>(8 * c, 2, 2));
    br.add(std::make_unique<BatchNorm2d>(8 * c));
    br.add(std::make_unique<ReLU>());
    int cur = 8 * c, s = 2;
    while (s * 2 < t_) {
      int next = std::max(2, cur / 2);
      br.add(std::make_unique<Deconv2d>(cur, next, 4, 2, 1, rng));
      br.add(std::make_unique<BatchNorm2d>(next));
      br.add(std::make_unique<ReLU>());
      cur = next;
      s *= 2;
    }
    br.add(std::make_unique<Deconv2d>(cur, 3, 4, 2, 1, rng));
    br.add(std::make_unique<Sigmoid>());
  }
}

std::vector<std::array<TextureGrid, 6>> TextureDecoder::forward(
    const Tensor& latent, bool train) {
  if (latent.shape.size() != 2 || latent.shape[1] != 512)
    throw Error("texture decoder: expected (N,512), got " +
                latent.shape_str());
  batch_ = latent.shape[0];
  std::vector<std::array<TextureGrid, 6>> out(batch_);
  for (int f = 0; f < 6; ++f) {
    Tensor y = branch_[f].forward(latent, train);
    for (int n = 0; n < batch_; ++n) {
      TextureGrid grid(t_);
      for (int v = 0; v < t_; ++v)
        for (int u = 0; u < t_; ++u)
          for (int ch = 0; ch < 3; ++ch)
            grid.at(u, v, ch) = y.at4(n, ch, v, u);
      out[n][f] = std::move(grid);
    }
  }
  return out;
}

Tensor TextureDecoder::backward(
    const std::vector<std::array<TextureGrid, 6>>& texel_grads) {
  if (int(texel_grads.size()) != batch_)
    throw Error("texture decoder backward: batch mismatch");
  Tensor glatent({batch_, 512});
  for (int f = 0; f < 6; ++f) {
    Tensor gy({batch_, 3, t_, t_});
    for (int n = 0; n < batch_; ++n) {
      const TextureGrid& g = texel_grads[n][f];
      if (g.size != t_)
        throw Error("texture decoder backward: grid size mismatch");
      for (int v = 0; v < t_; ++v)
        for (int u = 0; u < t_; ++u)
          for (int ch = 0; ch < 3; ++ch)
            gy.at4(n, ch, v, u) = g.at(u, v, ch);
    }
    Tensor gl = branch_[f].backward(gy);
    for (long i = 0; i < gl.numel(); ++i) glatent[i] += gl[i];
  }
  return glatent;
}

std::vector<Param*> TextureDecoder::params() {
  std::vector<Param*> out;
  for (auto& br : branch_)
    for (auto* p : br.params()) out.push_back(p);
  return out;
}

std::vector<Param*> TextureDecoder::state() {
  std::vector<Param*> out;
  for (auto& br : branch_)
    for (auto* p : br.state()) out.push_back(p);
  return out;
}

// -------------------------------------------------------------- Conditioning

Conditioning conditioning_from_string(const std::string& s) {
  if (s == "none") return Conditioning::kNone;
  if (s == "viewpoint") return Conditioning::kViewpoint;
  if (s == "viewpoint+class") return Conditioning::kViewpointClass;
  throw Error("unknown conditioning mode: " + s);
}

std::string to_string(Conditioning c) {
  switch (c) {
    case Conditioning::kNone: return "none";
    case Conditioning::kViewpoint: return "viewpoint";
    default: return "viewpoint+class";
  }
}

Tensor viewpoint_features(const std::vector<Viewpoint>& vps) {
  Tensor f({int(vps.size()), 3});
  for (std::size_t i = 0; i < vps.size(); ++i) {
    f.at2(int(i), 0) = vps[i].elevation / 90.0;
    f.at2(int(i), 1) = vps[i].azimuth / 180.0 - 1.0;
    f.at2(int(i), 2) = vps[i].distance / 3.0;
  }
  return f;
}

// ------------------------------------------------------------ Discriminator

Discriminator::Discriminator(int in_channels, int image_size, Conditioning cond,
                             int n_classes, bool batchnorm, double scale,
                             Rng& rng)
    : in_ch_(in_channels), cond_(cond), n_classes_(n_classes) {
  if (!power_of_two(image_size) || image_size < 16)
    throw Error("discriminator: image size must be a power of two >= 16");
  if (cond == Conditioning::kViewpointClass && n_classes < 1)
    throw Error("discriminator: class conditioning needs n_classes >= 1");
  int b = base_channels(scale);
  pre_.add(std::make_unique<Conv2d>(in_channels, b, 4, 2, 1, rng, true));
  pre_.add(std::make_unique<LeakyReLU>(0.2));

  int c_in = b + (cond == Conditioning::kNone ? 0 : 3);
  int c_out = 2 * b, s = image_size / 2;
  while (s > 4) {
    bool last = s / 2 <= 4;
    body_.add(std::make_unique<Conv2d>(c_in, c_out, 4, 2, 1, rng, true));
    if (batchnorm && !last) body_.add(std::make_unique<BatchNorm2d>(c_out));
    body_.add(std::make_unique<LeakyReLU>(0.2));
    c_in = c_out;
    c_out = std::min(8 * b, 2 * c_out);
    s /= 2;
  }
  body_.add(std::make_unique<GlobalPool>(GlobalPool::kSum));
  feat_dim_ = c_in;
  head_owned_ = std::make_unique<Linear>(feat_dim_, 1, rng, true);
  head_ = head_owned_.get();

  if (cond == Conditioning::kViewpointClass) {
    embed_.name = "embed";
    embed_.value = Tensor({n_classes, feat_dim_});
    for (auto& v : embed_.value.data) v = 0.05 * rng.gaussian();
    embed_u_.name = "embed_u";
    embed_u_.value = Tensor({n_classes});
    double n2 = 0;
    for (auto& v : embed_u_.value.data) {
      v = rng.gaussian();
      n2 += v * v;
    }
    for (auto& v : embed_u_.value.data) v /= std::sqrt(std::max(n2, 1e-24));
    embed_v_.name = "embed_v";
    embed_v_.value = Tensor({feat_dim_});
  }
}

Tensor Discriminator::forward(const Tensor& images, const Tensor& viewpoints,
                              const std::vector<int>& labels, bool train) {
  int n = images.shape[0];
  x1_ = pre_.forward(images, train);
  used_vp_ = cond_ != Conditioning::kNone;
  Tensor xc = x1_;
  if (used_vp_) {
    if (viewpoints.shape != std::vector<int>{n, 3})
      throw Error("discriminator: expected (N,3) viewpoints, got " +
                  viewpoints.shape_str());
    int c = x1_.shape[1], h = x1_.shape[2], w = x1_.shape[3];
    xc = Tensor({n, c + 3, h, w});
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            xc.at4(i, ch, y, x) = x1_.at4(i, ch, y, x);
      for (int ch = 0; ch < 3; ++ch) {
        double v = viewpoints.at2(i, ch);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) xc.at4(i, c + ch, y, x) = v;
      }
    }
  }
  phi_ = body_.forward(xc, train);
  Tensor logits = head_->forward(phi_, train);

  if (cond_ == Conditioning::kViewpointClass) {
    if (int(labels.size()) != n)
      throw Error("discriminator: labels size must match batch");
    for (int y : labels)
      if (y < 0 || y >= n_classes_)
        throw Error("discriminator: label out of range");
    labels_ = labels;
    if (train) {
      embed_hat_ =
          spectral_normalize(embed_.value, n_classes_, feat_dim_,
                             embed_u_.value, embed_v_.value, 1, &embed_sigma_);
    } else {
      Tensor u = embed_u_.value, v = embed_v_.value;
      embed_hat_ = spectral_normalize(embed_.value, n_classes_, feat_dim_, u,
                                      v, 1, &embed_sigma_);
    }
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int d = 0; d < feat_dim_; ++d)
        s += embed_hat_[long(labels[i]) * feat_dim_ + d] * phi_.at2(i, d);
      logits.at2(i, 0) += s;
    }
  }
  return logits;
}

Tensor Discriminator::backward(const Tensor& grad_logits) {
  int n = phi_.shape[0];
  if (grad_logits.shape != std::vector<int>{n, 1})
    throw Error("discriminator backward: bad upstream shape " +
                grad_logits.shape_str());
  Tensor gphi = head_->backward(grad_logits);
  if (cond_ == Conditioning::kViewpointClass) {
    if (embed_.grad.numel() == 0) embed_.zero_grad();
    Tensor gembed_hat(embed_.value.shape);
    for (int i = 0; i < n; ++i) {
      double g = grad_logits.at2(i, 0);
      long row = long(labels_[i]) * feat_dim_;
      for (int d = 0; d < feat_dim_; ++d) {
        gphi.at2(i, d) += g * embed_hat_[row + d];
        gembed_hat[row + d] += g * phi_.at2(i, d);
      }
    }
    Tensor graw = spectral_norm_backward(gembed_hat, embed_hat_,
                                         embed_u_.value, embed_v_.value,
                                         embed_sigma_, n_classes_, feat_dim_);
    for (long i = 0; i < graw.numel(); ++i) embed_.grad[i] += graw[i];
  }
  Tensor gxc = body_.backward(gphi);
  Tensor gx1 = gxc;
  if (used_vp_) {
    // viewpoint channels carry no trained input; drop their gradient
    int c = x1_.shape[1], h = x1_.shape[2], w = x1_.shape[3];
    gx1 = Tensor({n, c, h, w});
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            gx1.at4(i, ch, y, x) = gxc.at4(i, ch, y, x);
  }
  return pre_.backward(gx1);
}

std::vector<Param*> Discriminator::params() {
  std::vector<Param*> out;
  for (auto* p : pre_.params()) out.push_back(p);
  for (auto* p : body_.params()) out.push_back(p);
  for (auto* p : head_->params()) out.push_back(p);
  if (cond_ == Conditioning::kViewpointClass) out.push_back(&embed_);
  return out;
}

std::vector<Param*> Discriminator::state() {
  std::vector<Param*> out;
  for (auto* p : pre_.state()) out.push_back(p);
  for (auto* p : body_.state()) out.push_back(p);
  for (auto* p : head_->state()) out.push_back(p);
  if (cond_ == Conditioning::kViewpointClass) {
    out.push_back(&embed_u_);
    out.push_back(&embed_v_);
  }
  return out;
}

namespace {

// true top singular value of the normalized weight currently in use
double audit_one(const Tensor& w, int rows, int cols, const Tensor& u0,
                 const Tensor& v0, int iters) {
  Tensor u = u0, v = v0;
  double sigma_hat = 0;
  Tensor w_hat = spectral_normalize(w, rows, cols, u, v, 1, &sigma_hat);
  Tensor u2({rows}), v2({cols});
  u2.fill(1.0 / std::sqrt(double(rows)));
  double sigma = 0;
  spectral_normalize(w_hat, rows, cols, u2, v2, iters, &sigma);
  return sigma;
}

void audit_sequential(const Sequential& seq, int iters,
                      std::vector<double>& out) {
  auto& s = const_cast<Sequential&>(seq);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (auto* c = dynamic_cast<Conv2d*>(&s.layer(i)); c && c->sn_) {
      int rows = c->w_.value.shape[0];
      int cols = int(c->w_.value.numel() / rows);
      out.push_back(audit_one(c->w_.value, rows, cols, c->u_.value,
                              c->v_.value, iters));
    } else if (auto* l = dynamic_cast<Linear*>(&s.layer(i)); l && l->sn_) {
      int rows = l->w_.value.shape[0];
      int cols = int(l->w_.value.numel() / rows);
      out.push_back(audit_one(l->w_.value, rows, cols, l->u_.value,
                              l->v_.value, iters));
    }
  }
}

}  // namespace

std::vector<double> Discriminator::audit_spectral_norms(int iters) const {
  std::vector<double> out;
  audit_sequential(pre_, iters, out);
  audit_sequential(body_, iters, out);
  int rows = head_->w_.value.shape[0];
  int cols = int(head_->w_.value.numel() / rows);
  out.push_back(audit_one(head_->w_.value, rows, cols, head_->u_.value,
                          head_->v_.value, iters));
  if (cond_ == Conditioning::kViewpointClass)
    out.push_back(audit_one(embed_.value, n_classes_, feat_dim_,
                            embed_u_.value, embed_v_.value, iters));
  return out;
}

// --------------------------------------------------------------- checkpoints

namespace {
constexpr char kMagic[8] = {'V', 'P', 'L', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path, nlohmann::json header,
                     const std::vector<CheckpointBlock>& blocks) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& b : blocks)
    table.push_back({{"name", b.name}, {"shape", b.tensor->shape}});
  header["blocks"] = std::move(table);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  std::string hs = header.dump();
  std::uint32_t len = std::uint32_t(hs.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(hs.data(), std::streamsize(hs.size()));
  std::vector<float> buf;
  for (const auto& b : blocks) {
    Tensor& t = *b.tensor;
    buf.resize(std::size_t(t.numel()));
    for (long i = 0; i < t.numel(); ++i) {
      buf[std::size_t(i)] = float(t[i]);
      t[i] = double(buf[std::size_t(i)]);  // resume continues from the file
    }
    f.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * 4));
  }
  if (!f) throw Error("checkpoint write failed: " + path);
}

nlohmann::json read_checkpoint_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw Error("not a checkpoint file: " + path);
  std::uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  std::string hs(len, '\0');
  f.read(hs.data(), len);
  if (!f) throw Error("truncated checkpoint header: " + path);
  return nlohmann::json::parse(hs);
}

nlohmann::json load_checkpoint(const std::string& path,
                               const std::vector<CheckpointBlock>& blocks) {
  nlohmann::json header = read_checkpoint_header(path);
  std::ifstream f(path, std::ios::binary);
  f.seekg(8);
  std::uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  f.seekg(8 + 4 + std::streamoff(len));

  const auto& table = header.at("blocks");
  if (table.size() != blocks.size())
    throw Error("checkpoint block count mismatch: file has " +
                std::to_string(table.size()) + ", expected " +
                std::to_string(blocks.size()));
  std::vector<float> buf;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& entry = table[i];
    Tensor& t = *blocks[i].tensor;
    if (entry.at("name").get<std::string>() != blocks[i].name)
      throw Error("checkpoint block name mismatch at index " +
                  std::to_string(i) + ": " +
                  entry.at("name").get<std::string>() + " vs " +
                  blocks[i].name);
    if (entry.at("shape").get<std::vector<int>>() != t.shape)
      throw Error("checkpoint shape mismatch for block " + blocks[i].name);
    buf.resize(std::size_t(t.numel()));
    f.read(reinterpret_cast<char*>(buf.data()),
           std::streamsize(buf.size() * 4));
    if (!f) throw Error("truncated checkpoint data: " + path);
    for (long j = 0; j < t.numel(); ++j) t[j] = double(buf[std::size_t(j)]);
  }
  return header;
}

}  // namespace vpl::nn
