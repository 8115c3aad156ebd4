#pragma once

#include <array>
#include <string>
#include <vector>

#include "panini/gpm.hpp"
#include "panini/nn.hpp"
#include "panini/tensor.hpp"

// Image feature extraction: a dense block at input resolution, a stride-2
// conv chain forming the tilde pyramid down to the generator's base
// resolution, shape-preserving branch convs that decouple fusion features
// from the pyramid at the fused levels, and the latent-code encoder mapping
// the deepest level to the generator's per-row latent codes.

namespace panini::ife {

struct IfeConfig {
  int input_res = 32;
  gpm::GeneratorConfig gen;   // supplies channel schedule, n_fused, latent dims

  // pyramid levels: level n_tilde sits at input_res, level 1 at the
  // generator's base resolution; level i matches generator block i's shape
  int n_tilde() const;
  void validate() const;
};

// 4 conv layers with growth 16 and concatenative connectivity, then a 3x3
// transition conv to the requested output width. Leaky-ReLU throughout.
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(int in_ch, int out_ch, int growth = 16, int n_layers = 4);

  void init(Rng& rng);

  struct Ctx {
    std::vector<nn::Conv2d<float>::Ctx> layer_ctxs;
    std::vector<Tensor> layer_acts;   // post-activation growth maps
    std::vector<Tensor> cat_inputs;   // concat fed to each layer + transition
    nn::Conv2d<float>::Ctx trans_ctx;
    Tensor trans_act;
  };

  Tensor forward(const Tensor& x, Ctx* ctx) const;
  Tensor backward(const Tensor& gy, const Ctx& ctx);

  void collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out);
  std::vector<std::array<int, 3>> layer_specs() const;  // (kernel, stride, pad) per conv

 private:
  int in_ch_ = 0, out_ch_ = 0, growth_ = 16;
  std::vector<nn::Conv2d<float>> layers_;
  nn::Conv2d<float> transition_;
};

class Ife {
 public:
  Ife() = default;
  explicit Ife(const IfeConfig& cfg);

  void init(Rng& rng);

  struct Ctx {
    DenseBlock::Ctx dense_ctx;
    std::vector<nn::Conv2d<float>::Ctx> down_ctxs;
    std::vector<Tensor> down_acts;
    std::vector<nn::Conv2d<float>::Ctx> branch_ctxs;
    nn::Conv2d<float>::Ctx lce_conv_ctx;
    Tensor lce_act;
    std::vector<int> lce_shape;
    nn::Linear<float>::Ctx lce_fc_ctx;
  };

  struct PyramidOut {
    // index l-1 holds level l; tilde[0] is the deepest (base-resolution) map
    std::vector<Tensor> tilde;
    std::vector<Tensor> branch;   // fused levels only, index l-1
    Tensor w_plus;                // {N, n_latents, latent_dim}
  };

  // x: {N,3,R,R} in net range [-1,1].
  PyramidOut forward(const Tensor& x, Ctx* ctx) const;

  // g_branch: one grad per fused level (index l-1); g_w_plus for the latent
  // codes. Returns grad w.r.t. x.
  Tensor backward(const std::vector<Tensor>& g_branch, const Tensor& g_w_plus, const Ctx& ctx);

  // Single-image wrappers ({3,R,R}, image range handled by caller).
  std::vector<Tensor> extract_pyramid(const FeatureMap& x_net) const;
  Tensor branch_features(const Tensor& tilde_level, int level) const;
  Tensor encode_latents(const Tensor& tilde_1) const;  // {n_latents, latent_dim}

  void collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out);
  const IfeConfig& config() const { return cfg_; }

  // Conv hyperparameters (kernel, stride, pad) on the path input -> level 1,
  // for receptive-field reasoning in diagnostics.
  std::vector<std::array<int, 3>> path_layer_specs() const;

  nn::Conv2d<float>& branch_conv(int level);  // test access, 1-based fused level

 private:
  IfeConfig cfg_;
  DenseBlock dense_;
  std::vector<nn::Conv2d<float>> down_;      // down_[j] maps level n-j -> n-j-1
  std::vector<nn::Conv2d<float>> branch_;    // index l-1 for fused level l
  nn::Conv2d<float> lce_conv_;
  nn::Linear<float> lce_fc_;
};

}  // namespace panini::ife
