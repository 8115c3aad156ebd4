#include "panini/panini_model.hpp"

#include <cmath>
#include <fstream>

#include "panini/image_io.hpp"

namespace panini {

Mode parse_mode(const std::string& s) {
  if (s == "restoration" || s == "multideg") return Mode::restoration;
  if (s == "sr" || s == "sr16x") return Mode::sr;
  throw InvalidArgument("unknown mode '" + s + "' (want restoration or sr)");
}

DissectMode parse_dissect_mode(const std::string& s) {
  if (s == "full") return DissectMode::full;
  if (s == "gpb_only" || s == "gpb") return DissectMode::gpb_only;
  if (s == "ife_only" || s == "ife") return DissectMode::ife_only;
  throw InvalidArgument("unknown dissection mode '" + s + "' (want full|gpb_only|ife_only)");
}

std::string mode_name(Mode m) { return m == Mode::restoration ? "restoration" : "sr"; }

void LossWeights::validate() const {
  require(w_l1 >= 0 && w_perc >= 0 && w_adv >= 0, "loss weights must be nonnegative");
  require(w_l1 > 0 || w_perc > 0 || w_adv > 0, "at least one loss weight must be positive");
}

LossWeights LossWeights::from_config(const Config& cfg) {
  LossWeights w;
  w.w_l1 = cfg.get_double("w_l1", 1.0);
  w.w_perc = cfg.get_double("w_perc", 1.0);
  w.w_adv = cfg.get_double("w_adv", 0.05);
  w.validate();
  return w;
}

void PaniniConfig::validate() const {
  gen.validate();
  require(input_res >= 4, "panini: input_res too small");
  require(embed_dim >= 1 && dafi_hidden >= 1, "panini: bad head dimensions");
  ife::IfeConfig ic{input_res, gen};
  ic.validate();
  if (mode == Mode::restoration) {
    require(dre_res >= 8 && (dre_res & (dre_res - 1)) == 0,
            "panini: dre_res must be a power of two >= 8");
  }
}

std::map<std::string, std::string> PaniniConfig::to_map() const {
  std::map<std::string, std::string> m = gen.to_map();
  m["mode"] = mode_name(mode);
  m["input_res"] = std::to_string(input_res);
  m["dre_res"] = std::to_string(dre_res);
  m["embed_dim"] = std::to_string(embed_dim);
  m["dafi_hidden"] = std::to_string(dafi_hidden);
  m["use_cat_conv"] = use_cat_conv ? "true" : "false";
  return m;
}

PaniniConfig PaniniConfig::from_map(const std::map<std::string, std::string>& m) {
  PaniniConfig c;
  c.gen = gpm::GeneratorConfig::from_map(m);
  auto get = [&m](const std::string& k) -> std::string {
    auto it = m.find(k);
    if (it == m.end()) throw IncompatibleCheckpoint("model config: missing key '" + k + "'");
    return it->second;
  };
  c.mode = parse_mode(get("mode"));
  c.input_res = std::stoi(get("input_res"));
  c.dre_res = std::stoi(get("dre_res"));
  c.embed_dim = std::stoi(get("embed_dim"));
  c.dafi_hidden = std::stoi(get("dafi_hidden"));
  c.use_cat_conv = get("use_cat_conv") == "true";
  c.validate();
  return c;
}

PaniniConfig PaniniConfig::from_config(const Config& cfg) {
  PaniniConfig c;
  c.mode = parse_mode(cfg.get_str("mode", "restoration"));
  c.gen.n_blocks = static_cast<int>(cfg.get_int("gpm_n_blocks", 5));
  c.gen.n_fused =
      static_cast<int>(cfg.get_int("gpm_n_fused", c.mode == Mode::restoration ? 3 : 2));
  c.gen.base_resolution = static_cast<int>(cfg.get_int("gpm_base_resolution", 4));
  c.gen.latent_dim = static_cast<int>(cfg.get_int("gpm_latent_dim", 128));
  if (cfg.has("gpm_channels")) {
    c.gen.channels.clear();
    std::istringstream ss(cfg.get_str("gpm_channels", ""));
    std::string tok;
    while (std::getline(ss, tok, ',')) c.gen.channels.push_back(std::stoi(tok));
  }
  c.input_res =
      static_cast<int>(cfg.get_int("input_res", c.mode == Mode::restoration ? 32 : 8));
  c.dre_res = static_cast<int>(cfg.get_int("dre_res", 32));
  c.embed_dim = static_cast<int>(cfg.get_int("embed_dim", 256));
  c.dafi_hidden = static_cast<int>(cfg.get_int("dafi_hidden", 64));
  c.use_cat_conv = cfg.get_bool("use_cat_conv", false);
  c.validate();
  return c;
}

PaniniModel::PaniniModel(const PaniniConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.mode == Mode::restoration)
    dre_ = drep::DreEncoder({cfg_.dre_res, cfg_.embed_dim});
  ife_ = ife::Ife({cfg_.input_res, cfg_.gen});
  gen_ = gpm::Generator(cfg_.gen);
  for (int level = 1; level <= cfg_.gen.n_fused; ++level) {
    const int c = cfg_.gen.block_channels(level);
    // construction-time shape alignment between the two fusion inputs
    require(c == cfg_.gen.channels[static_cast<size_t>(level - 1)],
            "panini: fusion shape misalignment at level " + std::to_string(level));
    heads_.emplace_back(level, c, cfg_.dafi_hidden, cfg_.embed_dim);
    cat_heads_.emplace_back(level, c);
  }
  sr_const_ = Tensor({cfg_.embed_dim});
  g_sr_const_ = Tensor({cfg_.embed_dim});
}

void PaniniModel::init(Rng& rng) {
  if (cfg_.mode == Mode::restoration) dre_.init(rng);
  ife_.init(rng);
  gen_.init(rng);
  for (auto& h : heads_) h.init(rng);
  for (auto& h : cat_heads_) h.init(rng);
  sr_const_.randn(rng, 1.0);
}

Tensor PaniniModel::embed_batch(const Tensor& x_net, FwdCtx* ctx) const {
  const int n = x_net.dim(0);
  if (cfg_.mode == Mode::sr) {
    // normalized learned constant, broadcast; no DRE is consulted
    Tensor row = sr_const_.reshaped({1, cfg_.embed_dim});
    Tensor unit = nn::l2_normalize_rows(row, ctx ? &ctx->sr_norm_ctx : nullptr);
    Tensor v({n, cfg_.embed_dim});
    for (int i = 0; i < n; ++i)
      std::copy(unit.data(), unit.data() + cfg_.embed_dim,
                v.data() + static_cast<int64_t>(i) * cfg_.embed_dim);
    return v;
  }
  if (cfg_.dre_res == cfg_.input_res) return dre_.forward(x_net, nullptr);
  Tensor resized({n, 3, cfg_.dre_res, cfg_.dre_res});
  for (int i = 0; i < n; ++i) {
    Tensor one = nn::batch_item(x_net, i);
    Tensor r = resize_bilinear(one, cfg_.dre_res, cfg_.dre_res);
    std::copy(r.data(), r.data() + r.numel(),
              resized.data() + static_cast<int64_t>(i) * r.numel());
  }
  return dre_.forward(resized, nullptr);
}

Tensor PaniniModel::forward_batch(const Tensor& x_net, const ForwardOptions& opt, FwdCtx* ctx,
                                  RoutingStats* stats) const {
  require(x_net.rank() == 4 && x_net.dim(1) == 3, "restore: want {N,3,R,R}");
  if (x_net.dim(2) != cfg_.input_res || x_net.dim(3) != cfg_.input_res)
    throw InvalidArgument("restore: resolution mismatch, configured " +
                          std::to_string(cfg_.input_res) + " got " + x_net.shape_str());
  const int n = x_net.dim(0);
  const int n_fused = cfg_.gen.n_fused;

  Tensor v = embed_batch(x_net, ctx);
  ife::Ife::PyramidOut pyr = ife_.forward(x_net, ctx ? &ctx->ife_ctx : nullptr);

  if (ctx) {
    ctx->batch = n;
    ctx->v = v;
    ctx->block_ctxs.resize(static_cast<size_t>(cfg_.gen.n_blocks));
    ctx->head_ctxs.resize(static_cast<size_t>(n_fused));
    ctx->cat_ctxs.resize(static_cast<size_t>(n_fused));
    ctx->probs.resize(static_cast<size_t>(n_fused));
    ctx->f_gpb.resize(static_cast<size_t>(n_fused));
    ctx->f_ife.resize(static_cast<size_t>(n_fused));
  }
  if (stats) *stats = RoutingStats{};

  Tensor h;
  for (int b = 0; b < cfg_.gen.n_blocks; ++b) {
    h = gen_.block_forward(b, h, gpm::Generator::w_row(pyr.w_plus, 2 * b),
                           gpm::Generator::w_row(pyr.w_plus, 2 * b + 1),
                           ctx ? &ctx->block_ctxs[static_cast<size_t>(b)] : nullptr);
    const int level = b + 1;
    if (level <= n_fused) {
      const Tensor& f_ife = pyr.branch[static_cast<size_t>(level - 1)];
      require(f_ife.same_shape(h), "panini: fusion shape mismatch at level " +
                                       std::to_string(level) + ": " + f_ife.shape_str() +
                                       " vs " + h.shape_str());
      if (cfg_.use_cat_conv) {
        Tensor fused = cat_heads_[static_cast<size_t>(level - 1)].forward(
            h, f_ife, ctx ? &ctx->cat_ctxs[static_cast<size_t>(level - 1)] : nullptr);
        if (ctx) {
          ctx->f_gpb[static_cast<size_t>(level - 1)] = h;
          ctx->f_ife[static_cast<size_t>(level - 1)] = f_ife;
        }
        h = std::move(fused);
      } else {
        Tensor probs = heads_[static_cast<size_t>(level - 1)].forward(
            v, ctx ? &ctx->head_ctxs[static_cast<size_t>(level - 1)] : nullptr);
        if (opt.mask_bias != 0.0) {
          const bool apply = opt.bias_levels.empty() ||
                             std::find(opt.bias_levels.begin(), opt.bias_levels.end(), level) !=
                                 opt.bias_levels.end();
          if (apply) {
            constexpr double eps = 1e-6;
            for (int i = 0; i < probs.dim(0); ++i)
              for (int c = 0; c < probs.dim(2); ++c) {
                double w = probs.at3(i, 0, c) + opt.mask_bias;
                w = std::min(1.0 - eps, std::max(eps, w));
                probs.at3(i, 0, c) = static_cast<float>(w);
                probs.at3(i, 1, c) = static_cast<float>(1.0 - w);
              }
          }
        }
        if (stats) {
          double th = 0;
          for (int i = 0; i < probs.dim(0); ++i)
            for (int c = 0; c < probs.dim(2); ++c) th += probs.at3(i, 0, c);
          th /= static_cast<double>(probs.dim(0)) * probs.dim(2);
          stats->theta.push_back(th);
          stats->last_fused_theta = th;
        }
        Tensor fused;
        switch (opt.dissect) {
          case DissectMode::full:
            fused = dafi::interpolate_batched(h, f_ife, probs);
            break;
          case DissectMode::gpb_only: {
            Tensor zeros(f_ife.shape());
            fused = dafi::interpolate_batched(h, zeros, probs);
            break;
          }
          case DissectMode::ife_only: {
            Tensor zeros(h.shape());
            fused = dafi::interpolate_batched(zeros, f_ife, probs);
            break;
          }
        }
        if (ctx) {
          ctx->probs[static_cast<size_t>(level - 1)] = probs;
          ctx->f_gpb[static_cast<size_t>(level - 1)] = h;
          ctx->f_ife[static_cast<size_t>(level - 1)] = f_ife;
        }
        h = std::move(fused);
      }
      if (stats) stats->fused_transitions.push_back(level);
    } else {
      if (stats && level < cfg_.gen.n_blocks) stats->raw_transitions.push_back(level);
    }
  }
  return gen_.to_rgb(h, ctx ? &ctx->rgb_ctx : nullptr);
}

void PaniniModel::backward_batch(const Tensor& gy, const FwdCtx& ctx) {
  const int n_fused = cfg_.gen.n_fused;
  const int n = ctx.batch;
  Tensor g_w_plus({n, cfg_.gen.n_latents(), cfg_.gen.latent_dim});
  std::vector<Tensor> g_branch(static_cast<size_t>(n_fused));
  Tensor g_v({n, cfg_.embed_dim});

  Tensor g = gen_.to_rgb_backward(gy, ctx.rgb_ctx);
  for (int b = cfg_.gen.n_blocks - 1; b >= 0; --b) {
    const int level = b + 1;
    if (level <= n_fused) {
      // g currently sits on the fused output feeding block b+1
      if (cfg_.use_cat_conv) {
        auto [g_gpb, g_ife] =
            cat_heads_[static_cast<size_t>(level - 1)].backward(g, ctx.cat_ctxs[static_cast<size_t>(level - 1)]);
        g_branch[static_cast<size_t>(level - 1)] = std::move(g_ife);
        g = std::move(g_gpb);
      } else {
        auto grads = dafi::interpolate_batched_backward(
            g, ctx.f_gpb[static_cast<size_t>(level - 1)], ctx.f_ife[static_cast<size_t>(level - 1)],
            ctx.probs[static_cast<size_t>(level - 1)]);
        g_branch[static_cast<size_t>(level - 1)] = std::move(grads.g_ife);
        Tensor gv_level = heads_[static_cast<size_t>(level - 1)].backward(
            grads.g_probs, ctx.head_ctxs[static_cast<size_t>(level - 1)]);
        g_v.add_scaled(gv_level, 1.0f);
        g = std::move(grads.g_gpb);
      }
    }
    Tensor gr0, gr1;
    g = gen_.block_backward(b, g, ctx.block_ctxs[static_cast<size_t>(b)], &gr0, &gr1);
    const int64_t d = cfg_.gen.latent_dim;
    for (int s = 0; s < n; ++s) {
      std::copy(gr0.data() + s * d, gr0.data() + (s + 1) * d,
                g_w_plus.data() + (static_cast<int64_t>(s) * cfg_.gen.n_latents() + 2 * b) * d);
      std::copy(gr1.data() + s * d, gr1.data() + (s + 1) * d,
                g_w_plus.data() +
                    (static_cast<int64_t>(s) * cfg_.gen.n_latents() + 2 * b + 1) * d);
    }
  }

  ife_.backward(g_branch, g_w_plus, ctx.ife_ctx);

  if (cfg_.mode == Mode::sr && !cfg_.use_cat_conv) {
    // fold the broadcast back onto the learned constant, through the norm
    Tensor g_row({1, cfg_.embed_dim});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < cfg_.embed_dim; ++j) g_row.at2(0, j) += g_v.at2(i, j);
    Tensor g_raw = nn::l2_normalize_rows_backward(g_row, ctx.sr_norm_ctx);
    for (int j = 0; j < cfg_.embed_dim; ++j) g_sr_const_[j] += g_raw.at2(0, j);
  }
  // restoration mode: g_v stops here; the degradation encoder stays frozen
}

FeatureMap PaniniModel::restore(const FeatureMap& x_img, RoutingStats* stats) const {
  Tensor x = to_net_range(x_img).reshaped({1, 3, x_img.dim(1), x_img.dim(2)});
  Tensor y = forward_batch(x, ForwardOptions{}, nullptr, stats);
  return y.reshaped({3, y.dim(2), y.dim(3)});
}

FeatureMap PaniniModel::restore_dissected(const FeatureMap& x_img, DissectMode mode,
                                          RoutingStats* stats) const {
  ForwardOptions opt;
  opt.dissect = mode;
  Tensor x = to_net_range(x_img).reshaped({1, 3, x_img.dim(1), x_img.dim(2)});
  Tensor y = forward_batch(x, opt, nullptr, stats);
  return y.reshaped({3, y.dim(2), y.dim(3)});
}

FeatureMap PaniniModel::restore_edited(const FeatureMap& x_img, double bias,
                                       const std::vector<int>& levels) const {
  ForwardOptions opt;
  opt.mask_bias = bias;
  opt.bias_levels = levels;
  Tensor x = to_net_range(x_img).reshaped({1, 3, x_img.dim(1), x_img.dim(2)});
  Tensor y = forward_batch(x, opt, nullptr, nullptr);
  return y.reshaped({3, y.dim(2), y.dim(3)});
}

std::vector<dafi::Mask> PaniniModel::masks_for(const FeatureMap& x_img) const {
  Tensor x = to_net_range(x_img).reshaped({1, 3, x_img.dim(1), x_img.dim(2)});
  Tensor v = embed_batch(x, nullptr);
  std::vector<dafi::Mask> out;
  for (const auto& h : heads_) out.push_back(h.make_mask(v));
  return out;
}

void PaniniModel::collect_trainable_params(std::vector<nn::ParamRef<float>>& out,
                                           bool freeze_gpm) {
  ife_.collect_params("ife", out);
  if (!freeze_gpm) gen_.collect_params("gen", out);
  if (cfg_.use_cat_conv) {
    for (auto& h : cat_heads_)
      h.collect_params("dafi.cat" + std::to_string(h.level()), out);
  } else {
    for (auto& h : heads_)
      h.collect_params("dafi.head" + std::to_string(h.level()), out);
    if (cfg_.mode == Mode::sr) out.push_back({"sr_const", &sr_const_, &g_sr_const_});
  }
}

void PaniniModel::collect_all_params(std::vector<nn::ParamRef<float>>& out) {
  if (cfg_.mode == Mode::restoration) dre_.collect_params("dre", out);
  ife_.collect_params("ife", out);
  gen_.collect_params("gen", out);
  for (auto& h : heads_) h.collect_params("dafi.head" + std::to_string(h.level()), out);
  for (auto& h : cat_heads_) h.collect_params("dafi.cat" + std::to_string(h.level()), out);
  out.push_back({"sr_const", &sr_const_, &g_sr_const_});
}

Checkpoint PaniniModel::to_checkpoint() const {
  Checkpoint c;
  c.kind = "panini";
  c.config = cfg_.to_map();
  auto* self = const_cast<PaniniModel*>(this);
  std::vector<nn::ParamRef<float>> refs;
  self->collect_all_params(refs);
  store_params(c, refs);
  return c;
}

PaniniModel PaniniModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "panini")
    throw IncompatibleCheckpoint("expected a model checkpoint, got kind '" + ckpt.kind + "'");
  PaniniModel m(PaniniConfig::from_map(ckpt.config));
  std::vector<nn::ParamRef<float>> refs;
  m.collect_all_params(refs);
  load_params(ckpt, refs);
  return m;
}

AdvLosses adversarial_losses(const Tensor& d_real, const Tensor& d_fake) {
  require(d_real.rank() == 2 && d_real.dim(1) == 1 && d_fake.rank() == 2 && d_fake.dim(1) == 1,
          "adversarial_losses: want logits {N,1}");
  AdvLosses out;
  for (int i = 0; i < d_real.dim(0); ++i)
    out.d_loss += nn::softplus(-static_cast<double>(d_real.at2(i, 0)));
  for (int i = 0; i < d_fake.dim(0); ++i) {
    out.d_loss += nn::softplus(static_cast<double>(d_fake.at2(i, 0)));
    out.g_loss += nn::softplus(-static_cast<double>(d_fake.at2(i, 0)));
  }
  out.d_loss /= d_real.dim(0);
  out.g_loss /= d_fake.dim(0);
  return out;
}

PaniniTrainer::PaniniTrainer(PaniniModel& model, gpm::Discriminator& disc, const Config& cfg)
    : model_(model), disc_(disc), weights_(LossWeights::from_config(cfg)),
      adam_g_(0.9, 0.999), adam_d_(0.9, 0.999),
      perceptual_(cfg.get_u64("perceptual_seed", kPerceptualSeed)) {
  freeze_gpm_ = cfg.get_bool("freeze_gpm", false);
  r1_gamma_ = cfg.get_double("r1_gamma", 1.0);
  r1_interval_ = static_cast<int>(cfg.get_int("r1_interval", 16));
  const int steps = static_cast<int>(cfg.get_int("train_steps", 1000));
  const double lr = cfg.get_double("train_lr", 2e-3);
  const double min_lr = cfg.get_double("train_min_lr", 2e-4);
  g_sched_ = {lr, min_lr, steps};
  d_sched_ = {cfg.get_double("train_d_lr", 1e-3), min_lr, steps};
  model_.collect_trainable_params(g_params_, freeze_gpm_);
  disc_.collect_params("disc", d_params_);
}

TrainStepLosses PaniniTrainer::train_step(const Tensor& lq, const Tensor& hq) {
  require(lq.dim(0) == hq.dim(0), "train_step: batch size mismatch");
  TrainStepLosses losses;
  const int b = lq.dim(0);

  // generator-side step
  nn::zero_grads(g_params_);
  PaniniModel::FwdCtx ctx;
  Tensor y = model_.forward_batch(lq, ForwardOptions{}, &ctx);

  Tensor gy(y.shape());
  if (weights_.w_l1 > 0) {
    Tensor g_l1;
    losses.l1 = nn::l1_loss(y, hq, &g_l1);
    gy.add_scaled(g_l1, static_cast<float>(weights_.w_l1));
  }
  if (weights_.w_perc > 0) {
    Tensor g_perc;
    losses.perc = perceptual_.loss(y, hq, &g_perc);
    gy.add_scaled(g_perc, static_cast<float>(weights_.w_perc));
  }
  if (weights_.w_adv > 0) {
    gpm::Discriminator::Ctx dctx;
    Tensor logits = disc_.forward(y, &dctx);
    Tensor g_logits({b, 1});
    for (int i = 0; i < b; ++i) {
      losses.adv += nn::softplus(-static_cast<double>(logits.at2(i, 0)));
      g_logits.at2(i, 0) = static_cast<float>(-nn::sigmoid(-logits.at2(i, 0)) / b);
    }
    losses.adv /= b;
    Tensor g_adv = disc_.backward(g_logits, dctx);
    gy.add_scaled(g_adv, static_cast<float>(weights_.w_adv));
  }
  losses.total =
      weights_.w_l1 * losses.l1 + weights_.w_perc * losses.perc + weights_.w_adv * losses.adv;
  if (!std::isfinite(losses.total))
    throw TrainingDiverged("train_step: non-finite generator loss at step " +
                           std::to_string(step_) + " (l1=" + std::to_string(losses.l1) +
                           " perc=" + std::to_string(losses.perc) +
                           " adv=" + std::to_string(losses.adv) + ")");
  model_.backward_batch(gy, ctx);
  adam_g_.step(g_params_, g_sched_.lr_at(step_));

  // discriminator step (only meaningful when the adversarial term is active)
  if (weights_.w_adv > 0) {
    nn::zero_grads(d_params_);
    if (r1_gamma_ > 0 && step_ % r1_interval_ == 0)
      losses.d_loss += r1_penalty_fd(disc_, hq, r1_gamma_);
    gpm::Discriminator::Ctx cr, cf;
    Tensor d_real = disc_.forward(hq, &cr);
    Tensor d_fake = disc_.forward(y, &cf);  // y is detached here by construction
    AdvLosses adv = adversarial_losses(d_real, d_fake);
    losses.d_loss += adv.d_loss;
    Tensor g_real({b, 1}), g_fake({b, 1});
    for (int i = 0; i < b; ++i) {
      g_real.at2(i, 0) = static_cast<float>(-nn::sigmoid(-d_real.at2(i, 0)) / b);
      g_fake.at2(i, 0) = static_cast<float>(nn::sigmoid(d_fake.at2(i, 0)) / b);
    }
    disc_.backward(g_real, cr);
    disc_.backward(g_fake, cf);
    adam_d_.step(d_params_, d_sched_.lr_at(step_));
    if (!std::isfinite(losses.d_loss))
      throw TrainingDiverged("train_step: non-finite discriminator loss at step " +
                             std::to_string(step_));
  }

  ++step_;
  return losses;
}

FeatureMap make_lq(const FeatureMap& hq, Mode mode, int input_res, const DegradationParams& p) {
  if (mode == Mode::sr) return resize_bilinear(hq, input_res, input_res);
  FeatureMap degraded = apply_degradation(hq, p);
  if (degraded.dim(1) == input_res) return degraded;
  return resize_bilinear(degraded, input_res, input_res);
}

double validation_l1(PaniniModel& model, const std::vector<FeatureMap>& hq_val, Mode mode,
                     const ParamRanges& ranges, uint64_t seed) {
  require(!hq_val.empty(), "validation_l1: empty validation set");
  double acc = 0;
  for (size_t i = 0; i < hq_val.size(); ++i) {
    DegradationParams p = sample_params(ranges, derive_seed(seed, i));
    FeatureMap lq = make_lq(hq_val[i], mode, model.config().input_res, p);
    FeatureMap y = model.restore(lq);
    Tensor gt = to_net_range(hq_val[i]);
    acc += nn::l1_loss<float>(y, gt, nullptr);
  }
  return acc / static_cast<double>(hq_val.size());
}

FineTuneResult fine_tune(PaniniModel& model, gpm::Discriminator& disc,
                         const std::vector<FeatureMap>& hq_train,
                         const std::vector<FeatureMap>& hq_val, const Config& cfg,
                         const std::string& log_path) {
  require(!hq_train.empty(), "fine_tune: empty training pool");
  const int steps = static_cast<int>(cfg.get_int("train_steps", 1000));
  const int batch = static_cast<int>(cfg.get_int("train_batch", 8));
  const uint64_t seed = cfg.get_u64("seed", 0);
  const Mode mode = model.config().mode;
  const int in_res = model.config().input_res;
  const int out_res = model.config().gen.output_resolution();
  const ParamRanges ranges = drep::ranges_from_config(cfg);
  const uint64_t val_seed = derive_seed(seed, 0x7A1);
  PaniniTrainer trainer(model, disc, cfg);
  Rng rng(derive_seed(seed, 0xF17E));

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IoError("fine_tune: cannot write log " + log_path);
    log << "step,total,l1,perc,adv,d_loss\n";
  }

  FineTuneResult result;
  result.val_l1_start =
      hq_val.empty() ? 0.0 : validation_l1(model, hq_val, mode, ranges, val_seed);

  for (int step = 0; step < steps; ++step) {
    Tensor lq({batch, 3, in_res, in_res}), hq({batch, 3, out_res, out_res});
    for (int i = 0; i < batch; ++i) {
      const auto& img = hq_train[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(hq_train.size()) - 1))];
      DegradationParams p = sample_params(ranges, rng.next_u64());
      FeatureMap lq_img = make_lq(img, mode, in_res, p);
      Tensor lq_net = to_net_range(lq_img);
      Tensor hq_net = to_net_range(img);
      std::copy(lq_net.data(), lq_net.data() + lq_net.numel(),
                lq.data() + static_cast<int64_t>(i) * lq_net.numel());
      std::copy(hq_net.data(), hq_net.data() + hq_net.numel(),
                hq.data() + static_cast<int64_t>(i) * hq_net.numel());
    }
    TrainStepLosses l = trainer.train_step(lq, hq);
    result.curve.emplace_back(step, l);
    if (log)
      log << step << "," << l.total << "," << l.l1 << "," << l.perc << "," << l.adv << ","
          << l.d_loss << "\n";
  }

  result.val_l1_end =
      hq_val.empty() ? result.val_l1_start : validation_l1(model, hq_val, mode, ranges, val_seed);
  return result;
}

}  // namespace panini
