#pragma once

#include <map>
#include <string>
#include <vector>

#include "panini/checkpoint.hpp"
#include "panini/config.hpp"
#include "panini/dafi.hpp"
#include "panini/degrade.hpp"
#include "panini/drep.hpp"
#include "panini/gpm.hpp"
#include "panini/ife.hpp"
#include "panini/perceptual.hpp"
#include "panini/tensor.hpp"

// Full-model assembly: frozen degradation encoder, image feature extractor,
// GAN prior generator, and per-level fusion heads. Fused levels replace the
// next block's input with the convex blend of prior and image features; later
// blocks run prior-only. Includes dissected and mask-edited inference and the
// fine-tuning loop with composite L1 + perceptual + adversarial loss.

namespace panini {

enum class Mode { restoration, sr };
enum class DissectMode { full, gpb_only, ife_only };

Mode parse_mode(const std::string& s);
DissectMode parse_dissect_mode(const std::string& s);
std::string mode_name(Mode m);

struct LossWeights {
  double w_l1 = 1.0, w_perc = 1.0, w_adv = 0.05;

  void validate() const;
  static LossWeights from_config(const Config& cfg);
};

struct PaniniConfig {
  Mode mode = Mode::restoration;
  int input_res = 32;
  int dre_res = 32;        // resolution the degradation encoder consumes
  int embed_dim = 256;
  int dafi_hidden = 64;    // fusion-head hidden width
  bool use_cat_conv = false;  // ablation arm: concat+conv instead of masks
  gpm::GeneratorConfig gen;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static PaniniConfig from_map(const std::map<std::string, std::string>& m);
  static PaniniConfig from_config(const Config& cfg);
};

// Instrumentation filled during a forward pass: which block transitions
// consumed fused features, and the mean mask weight per fused level.
struct RoutingStats {
  std::vector<int> fused_transitions;  // 1-based producer block indices
  std::vector<int> raw_transitions;
  std::vector<double> theta;           // index l-1 = fused level l
  double last_fused_theta = 0.0;
};

struct ForwardOptions {
  DissectMode dissect = DissectMode::full;
  double mask_bias = 0.0;
  std::vector<int> bias_levels;  // empty with nonzero bias = all fused levels
};

class PaniniModel {
 public:
  PaniniModel() = default;
  explicit PaniniModel(const PaniniConfig& cfg);

  void init(Rng& rng);

  struct FwdCtx {
    ife::Ife::Ctx ife_ctx;
    std::vector<gpm::Generator::BlockCtx> block_ctxs;
    gpm::Generator::RgbCtx rgb_ctx;
    std::vector<dafi::FusionHeadT<float>::Ctx> head_ctxs;
    std::vector<dafi::CatConvHead::Ctx> cat_ctxs;
    std::vector<Tensor> probs;         // {N,2,C} per fused level
    std::vector<Tensor> f_gpb, f_ife;  // saved at fused levels
    Tensor v;                          // {N,embed_dim}
    nn::L2NormCtx<float> sr_norm_ctx;  // sr mode only
    int batch = 0;
  };

  // x_net: {N,3,input_res,input_res} in [-1,1]. Output {N,3,R,R} in [-1,1].
  Tensor forward_batch(const Tensor& x_net, const ForwardOptions& opt, FwdCtx* ctx,
                       RoutingStats* stats = nullptr) const;

  // Accumulates grads on all trainable components; gradient does not continue
  // into the frozen degradation encoder.
  void backward_batch(const Tensor& gy, const FwdCtx& ctx);

  // Single-image paths; input [0,255] {3,res,res}, output [-1,1] {3,R,R}.
  FeatureMap restore(const FeatureMap& x_img, RoutingStats* stats = nullptr) const;
  FeatureMap restore_dissected(const FeatureMap& x_img, DissectMode mode,
                               RoutingStats* stats = nullptr) const;
  FeatureMap restore_edited(const FeatureMap& x_img, double bias,
                            const std::vector<int>& levels) const;

  std::vector<dafi::Mask> masks_for(const FeatureMap& x_img) const;

  // Trainable set: ife + fusion heads (+ generator unless frozen) (+ the
  // learned embedding constant in sr mode). Never the degradation encoder.
  void collect_trainable_params(std::vector<nn::ParamRef<float>>& out, bool freeze_gpm);
  void collect_all_params(std::vector<nn::ParamRef<float>>& out);

  Checkpoint to_checkpoint() const;
  static PaniniModel from_checkpoint(const Checkpoint& ckpt);

  const PaniniConfig& config() const { return cfg_; }
  drep::DreEncoder& dre() { return dre_; }
  const drep::DreEncoder& dre() const { return dre_; }
  ife::Ife& ife() { return ife_; }
  gpm::Generator& generator() { return gen_; }
  const gpm::Generator& generator() const { return gen_; }
  std::vector<dafi::FusionHead>& heads() { return heads_; }
  std::vector<dafi::CatConvHead>& cat_heads() { return cat_heads_; }
  Tensor& sr_constant() { return sr_const_; }

  // Embedding used by the fusion heads for this input (degradation encoder
  // output, or the normalized learned constant in sr mode).
  Tensor embed_batch(const Tensor& x_net, FwdCtx* ctx) const;

 private:
  PaniniConfig cfg_;
  drep::DreEncoder dre_;
  ife::Ife ife_;
  gpm::Generator gen_;
  std::vector<dafi::FusionHead> heads_;
  std::vector<dafi::CatConvHead> cat_heads_;
  Tensor sr_const_, g_sr_const_;
};

// Stable log-sigmoid adversarial losses from logits {N,1}:
// d = mean[softplus(-d_real) + softplus(d_fake)], g = mean softplus(-d_fake).
struct AdvLosses {
  double g_loss = 0, d_loss = 0;
};
AdvLosses adversarial_losses(const Tensor& d_real, const Tensor& d_fake);

struct TrainStepLosses {
  double total = 0, l1 = 0, perc = 0, adv = 0, d_loss = 0;
};

class PaniniTrainer {
 public:
  PaniniTrainer(PaniniModel& model, gpm::Discriminator& disc, const Config& cfg);

  // lq/hq: net-range batches at input/output resolution.
  TrainStepLosses train_step(const Tensor& lq, const Tensor& hq);

  int step_count() const { return step_; }
  const LossWeights& weights() const { return weights_; }

 private:
  PaniniModel& model_;
  gpm::Discriminator& disc_;
  LossWeights weights_;
  bool freeze_gpm_ = false;
  double r1_gamma_ = 1.0;
  int r1_interval_ = 16;
  int step_ = 0;
  nn::Adam<float> adam_g_, adam_d_;
  nn::CosineSchedule g_sched_, d_sched_;
  Perceptual perceptual_;
  std::vector<nn::ParamRef<float>> g_params_, d_params_;
};

struct FineTuneResult {
  std::vector<std::pair<int, TrainStepLosses>> curve;
  double val_l1_start = 0, val_l1_end = 0;
};

// Degrades HQ pool images on the fly (restoration mode) or downsamples them
// (sr mode) to build training batches; validates with deterministic
// per-index degradations before and after.
FineTuneResult fine_tune(PaniniModel& model, gpm::Discriminator& disc,
                         const std::vector<FeatureMap>& hq_train,
                         const std::vector<FeatureMap>& hq_val, const Config& cfg,
                         const std::string& log_path = "");

// lq builder shared by training, eval and the CLI: restoration mode degrades
// then resizes to the model input; sr mode bilinearly downsamples.
FeatureMap make_lq(const FeatureMap& hq, Mode mode, int input_res, const DegradationParams& p);

// Mean L1 (net range) of model outputs vs ground truth over a fixed set.
double validation_l1(PaniniModel& model, const std::vector<FeatureMap>& hq_val, Mode mode,
                     const ParamRanges& ranges, uint64_t seed);

}  // namespace panini
