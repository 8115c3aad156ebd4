#include "panini/ife.hpp"

#include <cmath>

namespace panini::ife {

namespace {

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  const int n = parts[0]->dim(0), h = parts[0]->dim(2), w = parts[0]->dim(3);
  int c_total = 0;
  for (const Tensor* p : parts) c_total += p->dim(1);
  Tensor out({n, c_total, h, w});
  for (int i = 0; i < n; ++i) {
    int64_t off = static_cast<int64_t>(i) * c_total * h * w;
    for (const Tensor* p : parts) {
      const int64_t plane = static_cast<int64_t>(p->dim(1)) * h * w;
      std::copy(p->data() + i * plane, p->data() + (i + 1) * plane, out.data() + off);
      off += plane;
    }
  }
  return out;
}

void split_channels_add(const Tensor& g_cat, const std::vector<int>& widths,
                        std::vector<Tensor>& targets) {
  const int n = g_cat.dim(0), h = g_cat.dim(2), w = g_cat.dim(3);
  int c_total = 0;
  for (int c : widths) c_total += c;
  for (int i = 0; i < n; ++i) {
    int64_t off = static_cast<int64_t>(i) * c_total * h * w;
    for (size_t k = 0; k < widths.size(); ++k) {
      const int64_t plane = static_cast<int64_t>(widths[k]) * h * w;
      float* dst = targets[k].data() + i * plane;
      const float* src = g_cat.data() + off;
      for (int64_t j = 0; j < plane; ++j) dst[j] += src[j];
      off += plane;
    }
  }
}

}  // namespace

int IfeConfig::n_tilde() const {
  int n = 1, r = gen.base_resolution;
  while (r < input_res) {
    r *= 2;
    ++n;
  }
  return n;
}

void IfeConfig::validate() const {
  gen.validate();
  require(input_res >= gen.base_resolution, "ife: input_res below generator base resolution");
  int r = gen.base_resolution, n = 1;
  while (r < input_res) {
    r *= 2;
    ++n;
  }
  require(r == input_res, "ife: input_res must be base_resolution * 2^k");
  require(n <= gen.n_blocks, "ife: pyramid would exceed generator depth");
  require(gen.n_fused <= n, "ife: n_fused exceeds pyramid depth for this input resolution");
}

DenseBlock::DenseBlock(int in_ch, int out_ch, int growth, int n_layers)
    : in_ch_(in_ch), out_ch_(out_ch), growth_(growth) {
  int c = in_ch;
  for (int i = 0; i < n_layers; ++i) {
    layers_.emplace_back(c, growth, 3, 1, 1);
    c += growth;
  }
  transition_ = nn::Conv2d<float>(c, out_ch, 3, 1, 1);
}

void DenseBlock::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng, std::sqrt(2.0));
  transition_.init(rng, std::sqrt(2.0));
}

Tensor DenseBlock::forward(const Tensor& x, Ctx* ctx) const {
  require(x.rank() == 4 && x.dim(1) == in_ch_, "dense block: bad input " + x.shape_str());
  if (ctx) {
    ctx->layer_ctxs.resize(layers_.size());
    ctx->layer_acts.resize(layers_.size());
    ctx->cat_inputs.resize(layers_.size() + 1);
  }
  std::vector<Tensor> feats;
  feats.push_back(x);
  for (size_t i = 0; i < layers_.size(); ++i) {
    std::vector<const Tensor*> parts;
    for (const auto& f : feats) parts.push_back(&f);
    Tensor cat = concat_channels(parts);
    if (ctx) ctx->cat_inputs[i] = cat;
    Tensor h = layers_[i].forward(cat, ctx ? &ctx->layer_ctxs[i] : nullptr);
    h = nn::leaky_relu(h, 0.2f);
    if (ctx) ctx->layer_acts[i] = h;
    feats.push_back(std::move(h));
  }
  std::vector<const Tensor*> parts;
  for (const auto& f : feats) parts.push_back(&f);
  Tensor cat = concat_channels(parts);
  if (ctx) ctx->cat_inputs[layers_.size()] = cat;
  Tensor out = transition_.forward(cat, ctx ? &ctx->trans_ctx : nullptr);
  out = nn::leaky_relu(out, 0.2f);
  if (ctx) ctx->trans_act = out;
  return out;
}

Tensor DenseBlock::backward(const Tensor& gy, const Ctx& ctx) {
  const int n_layers = static_cast<int>(layers_.size());
  // per-feat accumulated grads: slot 0 = x, slot k = layer k-1 activation
  std::vector<int> widths;
  widths.push_back(in_ch_);
  for (int i = 0; i < n_layers; ++i) widths.push_back(growth_);
  std::vector<Tensor> g_feats;
  const Tensor& x_like = ctx.cat_inputs[0];
  const int n = x_like.dim(0), h = x_like.dim(2), w = x_like.dim(3);
  for (int c : widths) {
    Tensor t({n, c, h, w});
    g_feats.push_back(std::move(t));
  }

  Tensor g = nn::leaky_relu_backward(gy, ctx.trans_act, 0.2f);
  Tensor g_cat = transition_.backward(g, ctx.trans_ctx);
  split_channels_add(g_cat, widths, g_feats);

  for (int i = n_layers - 1; i >= 0; --i) {
    Tensor gi = nn::leaky_relu_backward(g_feats[static_cast<size_t>(i) + 1],
                                        ctx.layer_acts[static_cast<size_t>(i)], 0.2f);
    Tensor gc = layers_[static_cast<size_t>(i)].backward(gi, ctx.layer_ctxs[static_cast<size_t>(i)]);
    std::vector<int> sub(widths.begin(), widths.begin() + i + 1);
    split_channels_add(gc, sub, g_feats);
  }
  return g_feats[0];
}

void DenseBlock::collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out) {
  for (size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect_params(prefix + ".layer" + std::to_string(i), out);
  transition_.collect_params(prefix + ".transition", out);
}

std::vector<std::array<int, 3>> DenseBlock::layer_specs() const {
  std::vector<std::array<int, 3>> out;
  for (size_t i = 0; i < layers_.size() + 1; ++i) out.push_back({3, 1, 1});
  return out;
}

Ife::Ife(const IfeConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int n = cfg_.n_tilde();
  dense_ = DenseBlock(3, cfg_.gen.block_channels(n));
  for (int level = n; level > 1; --level)
    down_.emplace_back(cfg_.gen.block_channels(level), cfg_.gen.block_channels(level - 1), 3, 2, 1);
  for (int level = 1; level <= cfg_.gen.n_fused; ++level) {
    const int c = cfg_.gen.block_channels(level);
    branch_.emplace_back(c, c, 3, 1, 1);
  }
  const int c1 = cfg_.gen.block_channels(1);
  lce_conv_ = nn::Conv2d<float>(c1, 64, 3, 1, 1);
  const int base = cfg_.gen.base_resolution;
  lce_fc_ = nn::Linear<float>(64 * base * base, cfg_.gen.n_latents() * cfg_.gen.latent_dim);
}

void Ife::init(Rng& rng) {
  dense_.init(rng);
  for (auto& d : down_) d.init(rng, std::sqrt(2.0));
  for (auto& b : branch_) b.init(rng, 1.0);
  lce_conv_.init(rng, std::sqrt(2.0));
  lce_fc_.init(rng, 1.0);
}

Ife::PyramidOut Ife::forward(const Tensor& x, Ctx* ctx) const {
  require(x.rank() == 4 && x.dim(1) == 3, "ife: want {N,3,R,R}, got " + x.shape_str());
  if (x.dim(2) != cfg_.input_res || x.dim(3) != cfg_.input_res)
    throw InvalidArgument("ife: resolution mismatch, configured " +
                          std::to_string(cfg_.input_res) + " got " + x.shape_str());
  const int n = cfg_.n_tilde();
  if (ctx) {
    ctx->down_ctxs.resize(down_.size());
    ctx->down_acts.resize(down_.size());
    ctx->branch_ctxs.resize(branch_.size());
  }

  PyramidOut out;
  out.tilde.resize(static_cast<size_t>(n));
  out.tilde[static_cast<size_t>(n - 1)] = dense_.forward(x, ctx ? &ctx->dense_ctx : nullptr);
  for (size_t j = 0; j < down_.size(); ++j) {
    const int level = n - static_cast<int>(j);  // producing level-1 from level
    Tensor h = down_[j].forward(out.tilde[static_cast<size_t>(level - 1)],
                                ctx ? &ctx->down_ctxs[j] : nullptr);
    h = nn::leaky_relu(h, 0.2f);
    if (ctx) ctx->down_acts[j] = h;
    out.tilde[static_cast<size_t>(level - 2)] = std::move(h);
  }

  out.branch.resize(branch_.size());
  for (size_t b = 0; b < branch_.size(); ++b)
    out.branch[b] = branch_[b].forward(out.tilde[b], ctx ? &ctx->branch_ctxs[b] : nullptr);

  Tensor lce = lce_conv_.forward(out.tilde[0], ctx ? &ctx->lce_conv_ctx : nullptr);
  lce = nn::leaky_relu(lce, 0.2f);
  if (ctx) {
    ctx->lce_act = lce;
    ctx->lce_shape = lce.shape();
  }
  Tensor flat = lce.reshaped({lce.dim(0), lce.dim(1) * lce.dim(2) * lce.dim(3)});
  Tensor codes = lce_fc_.forward(flat, ctx ? &ctx->lce_fc_ctx : nullptr);
  out.w_plus = codes.reshaped({x.dim(0), cfg_.gen.n_latents(), cfg_.gen.latent_dim});
  return out;
}

Tensor Ife::backward(const std::vector<Tensor>& g_branch, const Tensor& g_w_plus,
                     const Ctx& ctx) {
  const int n = cfg_.n_tilde();
  std::vector<Tensor> g_tilde(static_cast<size_t>(n));

  // latent-code encoder path into level 1
  Tensor gflat = g_w_plus.reshaped(
      {g_w_plus.dim(0), cfg_.gen.n_latents() * cfg_.gen.latent_dim});
  Tensor g = lce_fc_.backward(gflat, ctx.lce_fc_ctx);
  g = g.reshaped(ctx.lce_shape);
  g = nn::leaky_relu_backward(g, ctx.lce_act, 0.2f);
  g_tilde[0] = lce_conv_.backward(g, ctx.lce_conv_ctx);

  // branch convs feed back into their levels
  for (size_t b = 0; b < branch_.size(); ++b) {
    if (b < g_branch.size() && g_branch[b].numel() > 0) {
      Tensor gb = branch_[b].backward(g_branch[b], ctx.branch_ctxs[b]);
      if (g_tilde[b].numel() == 0)
        g_tilde[b] = std::move(gb);
      else
        g_tilde[b].add_scaled(gb, 1.0f);
    }
  }

  // up the chain: level l feeds the down conv producing level l-1
  for (int j = static_cast<int>(down_.size()) - 1; j >= 0; --j) {
    const int level = n - j;  // this conv: level -> level-1
    Tensor gl = g_tilde[static_cast<size_t>(level - 2)];
    require(gl.numel() > 0, "ife backward: missing grad at level " + std::to_string(level - 1));
    gl = nn::leaky_relu_backward(gl, ctx.down_acts[static_cast<size_t>(j)], 0.2f);
    Tensor gin = down_[static_cast<size_t>(j)].backward(gl, ctx.down_ctxs[static_cast<size_t>(j)]);
    if (g_tilde[static_cast<size_t>(level - 1)].numel() == 0)
      g_tilde[static_cast<size_t>(level - 1)] = std::move(gin);
    else
      g_tilde[static_cast<size_t>(level - 1)].add_scaled(gin, 1.0f);
  }

  return dense_.backward(g_tilde[static_cast<size_t>(n - 1)], ctx.dense_ctx);
}

std::vector<Tensor> Ife::extract_pyramid(const FeatureMap& x_net) const {
  require(x_net.rank() == 3 && x_net.dim(0) == 3, "extract_pyramid: want {3,R,R}");
  Tensor batch = x_net.reshaped({1, 3, x_net.dim(1), x_net.dim(2)});
  PyramidOut out = forward(batch, nullptr);
  std::vector<Tensor> tilde;
  for (auto& t : out.tilde) tilde.push_back(t.reshaped({t.dim(1), t.dim(2), t.dim(3)}));
  return tilde;
}

Tensor Ife::branch_features(const Tensor& tilde_level, int level) const {
  if (level < 1 || level > static_cast<int>(branch_.size()))
    throw InvalidArgument("branch_features: no branch conv at level " + std::to_string(level));
  Tensor in = tilde_level.rank() == 3
                  ? tilde_level.reshaped({1, tilde_level.dim(0), tilde_level.dim(1),
                                          tilde_level.dim(2)})
                  : tilde_level;
  Tensor out = branch_[static_cast<size_t>(level - 1)].forward(in, nullptr);
  return tilde_level.rank() == 3 ? out.reshaped({out.dim(1), out.dim(2), out.dim(3)}) : out;
}

Tensor Ife::encode_latents(const Tensor& tilde_1) const {
  const int c1 = cfg_.gen.block_channels(1), base = cfg_.gen.base_resolution;
  Tensor in = tilde_1.rank() == 3 ? tilde_1.reshaped({1, tilde_1.dim(0), tilde_1.dim(1),
                                                      tilde_1.dim(2)})
                                  : tilde_1;
  if (in.dim(1) != c1 || in.dim(2) != base || in.dim(3) != base)
    throw InvalidArgument("encode_latents: want deepest level {" + std::to_string(c1) + "," +
                          std::to_string(base) + "," + std::to_string(base) + "}, got " +
                          tilde_1.shape_str());
  Tensor lce = lce_conv_.forward(in, nullptr);
  lce = nn::leaky_relu(lce, 0.2f);
  Tensor flat = lce.reshaped({lce.dim(0), lce.dim(1) * lce.dim(2) * lce.dim(3)});
  Tensor codes = lce_fc_.forward(flat, nullptr);
  if (tilde_1.rank() == 3) return codes.reshaped({cfg_.gen.n_latents(), cfg_.gen.latent_dim});
  return codes.reshaped({in.dim(0), cfg_.gen.n_latents(), cfg_.gen.latent_dim});
}

void Ife::collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out) {
  dense_.collect_params(prefix + ".dense", out);
  for (size_t i = 0; i < down_.size(); ++i)
    down_[i].collect_params(prefix + ".down" + std::to_string(i), out);
  for (size_t i = 0; i < branch_.size(); ++i)
    branch_[i].collect_params(prefix + ".branch" + std::to_string(i + 1), out);
  lce_conv_.collect_params(prefix + ".lce_conv", out);
  lce_fc_.collect_params(prefix + ".lce_fc", out);
}

std::vector<std::array<int, 3>> Ife::path_layer_specs() const {
  std::vector<std::array<int, 3>> specs = dense_.layer_specs();
  for (size_t i = 0; i < down_.size(); ++i) specs.push_back({3, 2, 1});
  return specs;
}

nn::Conv2d<float>& Ife::branch_conv(int level) {
  require(level >= 1 && level <= static_cast<int>(branch_.size()),
          "branch_conv: bad level " + std::to_string(level));
  return branch_[static_cast<size_t>(level - 1)];
}

}  // namespace panini::ife
