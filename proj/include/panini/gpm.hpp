#pragma once

#include <map>
#include <string>
#include <vector>

#include "panini/config.hpp"
#include "panini/nn.hpp"
#include "panini/optim.hpp"
#include "panini/tensor.hpp"

// GAN prior module: a small progressive style-modulated generator with a
// learned constant input (blocks double resolution after the first), plus a
// strided-conv discriminator and an adversarial pretraining loop with an R1
// stabilizer on the discriminator.

namespace panini::gpm {

struct GeneratorConfig {
  int n_blocks = 5;
  int n_fused = 3;
  int base_resolution = 4;
  std::vector<int> channels = {128, 128, 64, 64, 32};
  int latent_dim = 128;
  int rows_per_block = 2;

  int n_latents() const { return n_blocks * rows_per_block; }
  int output_resolution() const { return base_resolution << (n_blocks - 1); }
  // 1-based block index -> spatial resolution of its output
  int block_resolution(int i) const { return base_resolution << (i - 1); }
  int block_channels(int i) const { return channels[static_cast<size_t>(i - 1)]; }

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static GeneratorConfig from_map(const std::map<std::string, std::string>& m);
};

class Generator {
 public:
  Generator() = default;
  explicit Generator(const GeneratorConfig& cfg);

  void init(Rng& rng);

  struct BlockCtx {
    nn::ModulatedConv2d<float>::Ctx c1, c2;
    Tensor act1, act2;
    int batch = 0;
  };
  struct RgbCtx {
    nn::Conv2d<float>::Ctx conv_ctx;
    Tensor y;  // post-tanh
  };
  struct GenCtx {
    std::vector<BlockCtx> blocks;
    RgbCtx rgb;
  };

  // Block i (0-based). Block 0 ignores `input` and broadcasts the learned
  // constant over the batch; later blocks upsample 2x. w_r0/w_r1: {N,D}.
  Tensor block_forward(int i, const Tensor& input, const Tensor& w_r0, const Tensor& w_r1,
                       BlockCtx* ctx) const;

  // Returns grad w.r.t. the block input ({0} tensor for block 0, whose input
  // grad lands on the learned constant). g_w_r0/r1 receive latent-row grads.
  Tensor block_backward(int i, const Tensor& gy, const BlockCtx& ctx, Tensor* g_w_r0,
                        Tensor* g_w_r1);

  Tensor to_rgb(const Tensor& features, RgbCtx* ctx) const;  // 1x1 conv + tanh
  Tensor to_rgb_backward(const Tensor& gy, const RgbCtx& ctx);

  // Full pass: w {N, n_latents, D} -> images {N,3,R,R} in [-1,1].
  Tensor generate_batch(const Tensor& w, GenCtx* ctx) const;
  // Returns grad w.r.t. w; accumulates all parameter grads.
  Tensor generate_backward(const Tensor& gy, const GenCtx& ctx);

  // Single latent matrix {n_latents, D} -> image {3,R,R} in [-1,1].
  FeatureMap generate(const Tensor& w_plus) const;

  // Stochastic per-pixel noise injection, off by default so outputs are
  // deterministic; when on, noise fields derive from the stored seed and the
  // layer index only.
  void set_noise(bool enabled, uint64_t seed);
  bool noise_enabled() const { return noise_enabled_; }

  void collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out);
  const GeneratorConfig& config() const { return cfg_; }
  const Tensor& const_input() const { return const_input_; }

  // Slices row r of {N, n_latents, D} into {N,D}.
  static Tensor w_row(const Tensor& w, int r);

 private:
  struct Block {
    nn::ModulatedConv2d<float> c1, c2;
    Tensor noise_w1, noise_w2;    // learned noise strengths, scalars
    Tensor g_noise_w1, g_noise_w2;
  };
  Tensor noise_field(int block, int conv, int n, int c, int h, int w) const;

  GeneratorConfig cfg_;
  Tensor const_input_, g_const_input_;
  std::vector<Block> blocks_;
  nn::Conv2d<float> to_rgb_;
  bool noise_enabled_ = false;
  uint64_t noise_seed_ = 0;
};

class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(int input_res);

  void init(Rng& rng);

  struct Ctx {
    std::vector<nn::Conv2d<float>::Ctx> conv_ctxs;
    std::vector<Tensor> acts;
    std::vector<int> flat_shape;
    nn::Linear<float>::Ctx fc_ctx;
  };

  Tensor forward(const Tensor& x, Ctx* ctx) const;   // {N,3,R,R} -> logits {N,1}
  Tensor backward(const Tensor& g_logits, const Ctx& ctx);  // -> grad wrt x

  void collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out);
  int input_res() const { return input_res_; }

 private:
  int input_res_ = 0;
  std::vector<nn::Conv2d<float>> convs_;
  nn::Linear<float> fc_;
};

// Accumulates gamma/2 * d/dtheta ||grad_x D(x)||^2 into the discriminator's
// parameter grads using a central-difference Hessian-vector product (three
// extra passes, no second-order graph). Returns the penalty value.
double r1_penalty_fd(Discriminator& disc, const Tensor& x, double gamma, double fd_step = 1e-2);

// Samples one z per image and broadcasts it across all latent rows.
Tensor sample_latents(int n, const GeneratorConfig& cfg, Rng& rng);

struct GpmTrainStep {
  int step = 0;
  double d_loss = 0, g_loss = 0;
};
struct GpmTrainResult {
  std::vector<GpmTrainStep> curve;
};

GpmTrainResult pretrain_gpm(const std::vector<FeatureMap>& dataset, const Config& cfg,
                            Generator& gen, Discriminator& disc,
                            const std::string& log_path = "");

// Smoke-gate measurements: discriminator accuracy on held-out real vs fresh
// fake batches, sample pixel mean, and mean pairwise sample distance.
struct GpmEval {
  double disc_real_acc = 0, disc_fake_acc = 0;
  double sample_pixel_mean = 0;     // [0,255] scale
  double pairwise_l2_spread = 0;    // mean pairwise pixel L2, [0,255] scale
};

GpmEval evaluate_gpm(const Generator& gen, const Discriminator& disc,
                     const std::vector<FeatureMap>& heldout, int n_samples, uint64_t seed);

}  // namespace panini::gpm
