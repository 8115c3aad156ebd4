#include "panini/gpm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "panini/image_io.hpp"

namespace panini::gpm {

void GeneratorConfig::validate() const {
  require(n_blocks >= 2, "gpm: n_blocks must be >= 2");
  require(n_fused >= 1 && n_fused < n_blocks, "gpm: need 1 <= n_fused < n_blocks");
  require(base_resolution >= 2, "gpm: base_resolution must be >= 2");
  require(static_cast<int>(channels.size()) == n_blocks,
          "gpm: channel schedule length must equal n_blocks");
  for (int c : channels) require(c >= 1, "gpm: channels must be positive");
  require(latent_dim >= 1, "gpm: latent_dim must be positive");
  require(rows_per_block == 2, "gpm: rows_per_block is fixed at 2");
}

std::map<std::string, std::string> GeneratorConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["gpm_n_blocks"] = std::to_string(n_blocks);
  m["gpm_n_fused"] = std::to_string(n_fused);
  m["gpm_base_resolution"] = std::to_string(base_resolution);
  m["gpm_latent_dim"] = std::to_string(latent_dim);
  m["gpm_rows_per_block"] = std::to_string(rows_per_block);
  std::ostringstream ch;
  for (size_t i = 0; i < channels.size(); ++i) ch << (i ? "," : "") << channels[i];
  m["gpm_channels"] = ch.str();
  return m;
}

GeneratorConfig GeneratorConfig::from_map(const std::map<std::string, std::string>& m) {
  GeneratorConfig c;
  auto get = [&m](const std::string& k) -> std::string {
    auto it = m.find(k);
    if (it == m.end()) throw IncompatibleCheckpoint("generator config: missing key '" + k + "'");
    return it->second;
  };
  c.n_blocks = std::stoi(get("gpm_n_blocks"));
  c.n_fused = std::stoi(get("gpm_n_fused"));
  c.base_resolution = std::stoi(get("gpm_base_resolution"));
  c.latent_dim = std::stoi(get("gpm_latent_dim"));
  c.rows_per_block = std::stoi(get("gpm_rows_per_block"));
  c.channels.clear();
  std::istringstream ch(get("gpm_channels"));
  std::string tok;
  while (std::getline(ch, tok, ',')) c.channels.push_back(std::stoi(tok));
  c.validate();
  return c;
}

Generator::Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int b = cfg_.base_resolution;
  const int c0 = cfg_.channels[0];
  const_input_ = Tensor({c0, b, b});
  g_const_input_ = Tensor({c0, b, b});
  int in_ch = c0;
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const int out_ch = cfg_.channels[static_cast<size_t>(i)];
    Block blk;
    blk.c1 = nn::ModulatedConv2d<float>(in_ch, out_ch, cfg_.latent_dim, i > 0);
    blk.c2 = nn::ModulatedConv2d<float>(out_ch, out_ch, cfg_.latent_dim, false);
    blk.noise_w1 = Tensor({1});
    blk.noise_w2 = Tensor({1});
    blk.g_noise_w1 = Tensor({1});
    blk.g_noise_w2 = Tensor({1});
    blocks_.push_back(std::move(blk));
    in_ch = out_ch;
  }
  to_rgb_ = nn::Conv2d<float>(cfg_.channels.back(), 3, 1, 1, 0);
}

void Generator::init(Rng& rng) {
  const_input_.randn(rng, 1.0);
  for (auto& b : blocks_) {
    b.c1.init(rng);
    b.c2.init(rng);
    b.noise_w1.zero();
    b.noise_w2.zero();
  }
  to_rgb_.init(rng, 1.0);
}

void Generator::set_noise(bool enabled, uint64_t seed) {
  noise_enabled_ = enabled;
  noise_seed_ = seed;
}

Tensor Generator::noise_field(int block, int conv, int n, int c, int h, int w) const {
  Tensor field({n, c, h, w});
  Rng rng(derive_seed(noise_seed_, static_cast<uint64_t>(block) * 2 + conv));
  field.randn(rng, 1.0);
  return field;
}

Tensor Generator::w_row(const Tensor& w, int r) {
  require(w.rank() == 3, "w_row: want {N, n_latents, D}");
  const int n = w.dim(0), d = w.dim(2);
  Tensor out({n, d});
  for (int i = 0; i < n; ++i)
    std::copy(w.data() + (static_cast<int64_t>(i) * w.dim(1) + r) * d,
              w.data() + (static_cast<int64_t>(i) * w.dim(1) + r + 1) * d,
              out.data() + static_cast<int64_t>(i) * d);
  return out;
}

Tensor Generator::block_forward(int i, const Tensor& input, const Tensor& w_r0,
                                const Tensor& w_r1, BlockCtx* ctx) const {
  if (i < 0 || i >= cfg_.n_blocks)
    throw InvalidArgument("gpm block index out of range: " + std::to_string(i));
  const int n = w_r0.dim(0);
  Tensor x;
  if (i == 0) {
    // learned constant broadcast over the batch; the degraded input never
    // reaches this block
    x = Tensor({n, const_input_.dim(0), const_input_.dim(1), const_input_.dim(2)});
    const int64_t step = const_input_.numel();
    for (int s = 0; s < n; ++s)
      std::copy(const_input_.data(), const_input_.data() + step,
                x.data() + static_cast<int64_t>(s) * step);
  } else {
    const int want_ch = cfg_.channels[static_cast<size_t>(i - 1)];
    const int want_res = cfg_.block_resolution(i);
    require(input.rank() == 4 && input.dim(1) == want_ch && input.dim(2) == want_res &&
                input.dim(3) == want_res,
            "gpm block " + std::to_string(i + 1) + ": bad input shape " + input.shape_str());
    x = input;
  }
  const Block& blk = blocks_[static_cast<size_t>(i)];
  Tensor h1 = blk.c1.forward(x, w_r0, ctx ? &ctx->c1 : nullptr);
  if (noise_enabled_) {
    Tensor nf = noise_field(i, 0, h1.dim(0), h1.dim(1), h1.dim(2), h1.dim(3));
    h1.add_scaled(nf, blk.noise_w1[0]);
  }
  Tensor a1 = nn::leaky_relu(h1, 0.2f);
  Tensor h2 = blk.c2.forward(a1, w_r1, ctx ? &ctx->c2 : nullptr);
  if (noise_enabled_) {
    Tensor nf = noise_field(i, 1, h2.dim(0), h2.dim(1), h2.dim(2), h2.dim(3));
    h2.add_scaled(nf, blk.noise_w2[0]);
  }
  Tensor a2 = nn::leaky_relu(h2, 0.2f);
  if (ctx) {
    ctx->act1 = a1;
    ctx->act2 = a2;
    ctx->batch = n;
  }
  return a2;
}

Tensor Generator::block_backward(int i, const Tensor& gy, const BlockCtx& ctx, Tensor* g_w_r0,
                                 Tensor* g_w_r1) {
  Block& blk = blocks_[static_cast<size_t>(i)];
  Tensor g2 = nn::leaky_relu_backward(gy, ctx.act2, 0.2f);
  if (noise_enabled_) {
    Tensor nf = noise_field(i, 1, g2.dim(0), g2.dim(1), g2.dim(2), g2.dim(3));
    double acc = 0;
    for (int64_t j = 0; j < g2.numel(); ++j) acc += static_cast<double>(g2[j]) * nf[j];
    blk.g_noise_w2[0] += static_cast<float>(acc);
  }
  auto [ga1, gw1] = blk.c2.backward(g2, ctx.c2);
  if (g_w_r1) *g_w_r1 = std::move(gw1);
  Tensor g1 = nn::leaky_relu_backward(ga1, ctx.act1, 0.2f);
  if (noise_enabled_) {
    Tensor nf = noise_field(i, 0, g1.dim(0), g1.dim(1), g1.dim(2), g1.dim(3));
    double acc = 0;
    for (int64_t j = 0; j < g1.numel(); ++j) acc += static_cast<double>(g1[j]) * nf[j];
    blk.g_noise_w1[0] += static_cast<float>(acc);
  }
  auto [gx, gw0] = blk.c1.backward(g1, ctx.c1);
  if (g_w_r0) *g_w_r0 = std::move(gw0);
  if (i == 0) {
    // fold the broadcast: sum the per-sample grads into the constant
    const int64_t step = const_input_.numel();
    for (int s = 0; s < ctx.batch; ++s)
      for (int64_t j = 0; j < step; ++j)
        g_const_input_[j] += gx[static_cast<int64_t>(s) * step + j];
    return Tensor({0});
  }
  return gx;
}

Tensor Generator::to_rgb(const Tensor& features, RgbCtx* ctx) const {
  Tensor pre = to_rgb_.forward(features, ctx ? &ctx->conv_ctx : nullptr);
  Tensor y = nn::tanh_fwd(pre);
  if (ctx) ctx->y = y;
  return y;
}

Tensor Generator::to_rgb_backward(const Tensor& gy, const RgbCtx& ctx) {
  Tensor g = nn::tanh_backward(gy, ctx.y);
  return to_rgb_.backward(g, ctx.conv_ctx);
}

Tensor Generator::generate_batch(const Tensor& w, GenCtx* ctx) const {
  require(w.rank() == 3 && w.dim(1) == cfg_.n_latents() && w.dim(2) == cfg_.latent_dim,
          "generate: latent shape mismatch, want {N," + std::to_string(cfg_.n_latents()) + "," +
              std::to_string(cfg_.latent_dim) + "}, got " + w.shape_str());
  if (ctx) ctx->blocks.resize(static_cast<size_t>(cfg_.n_blocks));
  Tensor h;
  for (int i = 0; i < cfg_.n_blocks; ++i)
    h = block_forward(i, h, w_row(w, 2 * i), w_row(w, 2 * i + 1),
                      ctx ? &ctx->blocks[static_cast<size_t>(i)] : nullptr);
  return to_rgb(h, ctx ? &ctx->rgb : nullptr);
}

Tensor Generator::generate_backward(const Tensor& gy, const GenCtx& ctx) {
  const int n = gy.dim(0);
  Tensor g_w({n, cfg_.n_latents(), cfg_.latent_dim});
  Tensor g = to_rgb_backward(gy, ctx.rgb);
  for (int i = cfg_.n_blocks - 1; i >= 0; --i) {
    Tensor gr0, gr1;
    g = block_backward(i, g, ctx.blocks[static_cast<size_t>(i)], &gr0, &gr1);
    for (int s = 0; s < n; ++s) {
      const int64_t d = cfg_.latent_dim;
      std::copy(gr0.data() + s * d, gr0.data() + (s + 1) * d,
                g_w.data() + (static_cast<int64_t>(s) * cfg_.n_latents() + 2 * i) * d);
      std::copy(gr1.data() + s * d, gr1.data() + (s + 1) * d,
                g_w.data() + (static_cast<int64_t>(s) * cfg_.n_latents() + 2 * i + 1) * d);
    }
  }
  return g_w;
}

FeatureMap Generator::generate(const Tensor& w_plus) const {
  require(w_plus.rank() == 2 && w_plus.dim(0) == cfg_.n_latents() &&
              w_plus.dim(1) == cfg_.latent_dim,
          "generate: latent shape mismatch, got " + w_plus.shape_str());
  Tensor w = w_plus.reshaped({1, cfg_.n_latents(), cfg_.latent_dim});
  Tensor y = generate_batch(w, nullptr);
  return y.reshaped({3, y.dim(2), y.dim(3)});
}

void Generator::collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out) {
  out.push_back({prefix + ".const_input", &const_input_, &g_const_input_});
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    blocks_[i].c1.collect_params(bp + ".c1", out);
    blocks_[i].c2.collect_params(bp + ".c2", out);
    out.push_back({bp + ".noise_w1", &blocks_[i].noise_w1, &blocks_[i].g_noise_w1});
    out.push_back({bp + ".noise_w2", &blocks_[i].noise_w2, &blocks_[i].g_noise_w2});
  }
  to_rgb_.collect_params(prefix + ".to_rgb", out);
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(int input_res) : input_res_(input_res) {
  require(input_res >= 8 && (input_res & (input_res - 1)) == 0,
          "discriminator: input_res must be a power of two >= 8");
  int in_ch = 3, res = input_res;
  int ch = 32;
  while (res > 4) {
    convs_.emplace_back(in_ch, ch, 3, 2, 1);
    in_ch = ch;
    ch = std::min(128, ch * 2);
    res /= 2;
  }
  fc_ = nn::Linear<float>(in_ch * 4 * 4, 1);
}

void Discriminator::init(Rng& rng) {
  for (auto& c : convs_) c.init(rng, std::sqrt(2.0));
  fc_.init(rng, 1.0);
}

Tensor Discriminator::forward(const Tensor& x, Ctx* ctx) const {
  require(x.rank() == 4 && x.dim(1) == 3 && x.dim(2) == input_res_ && x.dim(3) == input_res_,
          "discriminator: bad input shape " + x.shape_str());
  if (ctx) {
    ctx->conv_ctxs.resize(convs_.size());
    ctx->acts.resize(convs_.size());
  }
  Tensor h = x;
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i].forward(h, ctx ? &ctx->conv_ctxs[i] : nullptr);
    h = nn::leaky_relu(h, 0.2f);
    if (ctx) ctx->acts[i] = h;
  }
  if (ctx) ctx->flat_shape = h.shape();
  Tensor flat = h.reshaped({h.dim(0), h.dim(1) * h.dim(2) * h.dim(3)});
  return fc_.forward(flat, ctx ? &ctx->fc_ctx : nullptr);
}

Tensor Discriminator::backward(const Tensor& g_logits, const Ctx& ctx) {
  Tensor g = fc_.backward(g_logits, ctx.fc_ctx);
  g = g.reshaped(ctx.flat_shape);
  for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
    g = nn::leaky_relu_backward(g, ctx.acts[static_cast<size_t>(i)], 0.2f);
    g = convs_[static_cast<size_t>(i)].backward(g, ctx.conv_ctxs[static_cast<size_t>(i)]);
  }
  return g;
}

void Discriminator::collect_params(const std::string& prefix,
                                   std::vector<nn::ParamRef<float>>& out) {
  for (size_t i = 0; i < convs_.size(); ++i)
    convs_[i].collect_params(prefix + ".conv" + std::to_string(i), out);
  fc_.collect_params(prefix + ".fc", out);
}

// ---------------------------------------------------------------------------

double r1_penalty_fd(Discriminator& disc, const Tensor& x, double gamma, double fd_step) {
  std::vector<nn::ParamRef<float>> params;
  disc.collect_params("d", params);

  // pass 1: input gradient of sum(D(x)); parameter grads from this pass are
  // restored afterwards so only the penalty contribution lands on them
  std::vector<Tensor> saved;
  saved.reserve(params.size());
  for (auto& p : params) saved.push_back(*p.grad);

  Discriminator::Ctx ctx;
  Tensor logits = disc.forward(x, &ctx);
  Tensor ones({logits.dim(0), 1});
  ones.fill(1.0f);
  Tensor gx = disc.backward(ones, ctx);

  for (size_t i = 0; i < params.size(); ++i) *params[i].grad = saved[i];

  double norm_sq = 0;
  for (int64_t i = 0; i < gx.numel(); ++i) norm_sq += static_cast<double>(gx[i]) * gx[i];
  const double penalty = 0.5 * gamma * norm_sq;
  const double norm = std::sqrt(norm_sq);
  if (norm < 1e-12) return penalty;

  // passes 2/3: d/dtheta ||grad_x D||^2 = 2 * H_{theta,x} grad_x D, taken as
  // a central difference along u = grad_x D / ||grad_x D||. backward() is
  // linear in its seed, so the weighting rides on the seed vector.
  const double coeff = 0.5 * gamma * norm / fd_step;  // includes the 1/2 from the penalty
  for (int sign = +1; sign >= -1; sign -= 2) {
    Tensor xs = x;
    xs.add_scaled(gx, static_cast<float>(sign * fd_step / norm));
    Discriminator::Ctx c2;
    Tensor l2 = disc.forward(xs, &c2);
    (void)l2;
    Tensor seed({x.dim(0), 1});
    seed.fill(static_cast<float>(sign * coeff));
    disc.backward(seed, c2);
  }
  return penalty;
}

Tensor sample_latents(int n, const GeneratorConfig& cfg, Rng& rng) {
  Tensor w({n, cfg.n_latents(), cfg.latent_dim});
  for (int i = 0; i < n; ++i) {
    std::vector<float> z(static_cast<size_t>(cfg.latent_dim));
    for (auto& v : z) v = static_cast<float>(rng.normal());
    for (int r = 0; r < cfg.n_latents(); ++r)
      std::copy(z.begin(), z.end(),
                w.data() + (static_cast<int64_t>(i) * cfg.n_latents() + r) * cfg.latent_dim);
  }
  return w;
}

GpmTrainResult pretrain_gpm(const std::vector<FeatureMap>& dataset, const Config& cfg,
                            Generator& gen, Discriminator& disc, const std::string& log_path) {
  require(!dataset.empty(), "pretrain_gpm: empty dataset");
  const int res = gen.config().output_resolution();
  for (const auto& img : dataset)
    require(img.rank() == 3 && img.dim(0) == 3 && img.dim(1) == res && img.dim(2) == res,
            "pretrain_gpm: dataset image shape mismatch");
  const int steps = static_cast<int>(cfg.get_int("gpm_steps", 500));
  const int batch = static_cast<int>(cfg.get_int("gpm_batch", 8));
  const double g_lr = cfg.get_double("gpm_lr", 2e-3);
  const double g_min_lr = cfg.get_double("gpm_min_lr", 2e-4);
  const double d_lr = cfg.get_double("gpm_d_lr", 2e-3);
  const double r1_gamma = cfg.get_double("gpm_r1_gamma", 1.0);
  const int r1_interval = static_cast<int>(cfg.get_int("gpm_r1_interval", 16));
  const uint64_t seed = cfg.get_u64("seed", 0);

  std::vector<nn::ParamRef<float>> g_params, d_params;
  gen.collect_params("gen", g_params);
  disc.collect_params("disc", d_params);
  nn::Adam<float> adam_g(0.0, 0.99), adam_d(0.0, 0.99);
  nn::CosineSchedule g_sched{g_lr, g_min_lr, steps};
  Rng rng(derive_seed(seed, 0x69F4));

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IoError("pretrain_gpm: cannot write log " + log_path);
    log << "step,d_loss,g_loss\n";
  }

  auto real_batch = [&]() {
    Tensor out({batch, 3, res, res});
    for (int i = 0; i < batch; ++i) {
      const auto& img = dataset[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))];
      Tensor t = to_net_range(img);
      std::copy(t.data(), t.data() + t.numel(), out.data() + static_cast<int64_t>(i) * t.numel());
    }
    return out;
  };

  GpmTrainResult result;
  for (int step = 0; step < steps; ++step) {
    // discriminator step
    nn::zero_grads(d_params);
    Tensor reals = real_batch();
    Tensor w_d = sample_latents(batch, gen.config(), rng);
    Tensor fakes = gen.generate_batch(w_d, nullptr);  // detached

    double d_loss = 0;
    if (r1_gamma > 0 && step % r1_interval == 0)
      d_loss += r1_penalty_fd(disc, reals, r1_gamma);

    Discriminator::Ctx cr, cf;
    Tensor lr_logits = disc.forward(reals, &cr);
    Tensor lf_logits = disc.forward(fakes, &cf);
    Tensor g_lr_logits({batch, 1}), g_lf_logits({batch, 1});
    for (int i = 0; i < batch; ++i) {
      d_loss += nn::softplus(-lr_logits.at2(i, 0)) + nn::softplus(lf_logits.at2(i, 0));
      g_lr_logits.at2(i, 0) = static_cast<float>(-nn::sigmoid(-lr_logits.at2(i, 0)) / batch);
      g_lf_logits.at2(i, 0) = static_cast<float>(nn::sigmoid(lf_logits.at2(i, 0)) / batch);
    }
    d_loss /= batch;
    disc.backward(g_lr_logits, cr);
    disc.backward(g_lf_logits, cf);
    adam_d.step(d_params, d_lr);

    // generator step
    nn::zero_grads(g_params);
    Tensor w_g = sample_latents(batch, gen.config(), rng);
    Generator::GenCtx gctx;
    Tensor fakes_g = gen.generate_batch(w_g, &gctx);
    Discriminator::Ctx cg;
    Tensor lg = disc.forward(fakes_g, &cg);
    double g_loss = 0;
    Tensor g_lg({batch, 1});
    for (int i = 0; i < batch; ++i) {
      g_loss += nn::softplus(-lg.at2(i, 0));
      g_lg.at2(i, 0) = static_cast<float>(-nn::sigmoid(-lg.at2(i, 0)) / batch);
    }
    g_loss /= batch;
    Tensor g_fake = disc.backward(g_lg, cg);
    gen.generate_backward(g_fake, gctx);
    adam_g.step(g_params, g_sched.lr_at(step));

    if (!std::isfinite(d_loss) || !std::isfinite(g_loss))
      throw TrainingDiverged("pretrain_gpm: non-finite loss at step " + std::to_string(step) +
                             " (d=" + std::to_string(d_loss) + " g=" + std::to_string(g_loss) +
                             ")");
    result.curve.push_back({step, d_loss, g_loss});
    if (log) log << step << "," << d_loss << "," << g_loss << "\n";
  }
  return result;
}

GpmEval evaluate_gpm(const Generator& gen, const Discriminator& disc,
                     const std::vector<FeatureMap>& heldout, int n_samples, uint64_t seed) {
  require(n_samples >= 2, "evaluate_gpm: need at least 2 samples");
  Rng rng(seed);
  GpmEval ev;

  std::vector<Tensor> samples;
  double pix_acc = 0;
  int fake_correct = 0;
  for (int i = 0; i < n_samples; ++i) {
    Tensor w = sample_latents(1, gen.config(), rng);
    Tensor y = gen.generate_batch(w, nullptr);
    Tensor logits = disc.forward(y, nullptr);
    if (logits.at2(0, 0) < 0) ++fake_correct;
    FeatureMap img = to_image_range(y.reshaped({3, y.dim(2), y.dim(3)}));
    pix_acc += img.mean();
    samples.push_back(std::move(y));
  }
  ev.sample_pixel_mean = pix_acc / n_samples;
  ev.disc_fake_acc = static_cast<double>(fake_correct) / n_samples;

  double spread = 0;
  int pairs = 0;
  for (size_t a = 0; a < samples.size(); ++a)
    for (size_t b = a + 1; b < samples.size(); ++b) {
      double d2 = 0;
      for (int64_t j = 0; j < samples[a].numel(); ++j) {
        const double d = (static_cast<double>(samples[a][j]) - samples[b][j]) * 127.5;
        d2 += d * d;
      }
      spread += std::sqrt(d2 / static_cast<double>(samples[a].numel()));
      ++pairs;
    }
  ev.pairwise_l2_spread = spread / std::max(1, pairs);

  int real_correct = 0;
  for (const auto& img : heldout) {
    Tensor x = to_net_range(img);
    x = x.reshaped({1, 3, x.dim(1), x.dim(2)});
    Tensor logits = disc.forward(x, nullptr);
    if (logits.at2(0, 0) > 0) ++real_correct;
  }
  ev.disc_real_acc = heldout.empty() ? 0.0
                                     : static_cast<double>(real_correct) /
                                           static_cast<double>(heldout.size());
  return ev;
}

}  // namespace panini::gpm
