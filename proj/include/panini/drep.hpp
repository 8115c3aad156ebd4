#pragma once

#include <string>
#include <utility>
#include <vector>

#include "panini/config.hpp"
#include "panini/degrade.hpp"
#include "panini/nn.hpp"
#include "panini/optim.hpp"
#include "panini/tensor.hpp"

// Unsupervised degradation representation learning: a small strided conv
// encoder maps an image to a unit 256-dim embedding of its degradation; a
// momentum copy encodes keys; a FIFO queue supplies negatives; the
// contrastive objective pulls a query toward the key that shares its
// degradation function and away from the queue.

namespace panini::drep {

struct DreConfig {
  int input_res = 64;   // power of two, >= 8
  int embed_dim = 256;

  void validate() const;
};

// Six strided 3x3 convs (channels 32,64,64,128,128,256), global average
// pool, two-layer projection head, L2 normalization. Stride-2 stages are
// front-loaded so the spatial size reaches 2x2 regardless of input_res.
class DreEncoder {
 public:
  DreEncoder() = default;
  explicit DreEncoder(const DreConfig& cfg);

  void init(Rng& rng);

  struct Ctx {
    std::vector<nn::Conv2d<float>::Ctx> conv_ctxs;
    std::vector<Tensor> conv_acts;     // post-activation maps
    std::vector<int> gap_in_shape;
    nn::Linear<float>::Ctx fc1_ctx, fc2_ctx;
    Tensor hidden_act;
    nn::L2NormCtx<float> l2_ctx;
  };

  // x: {N,3,R,R} in [-1,1] net range. Returns unit-norm rows {N,embed_dim}.
  Tensor forward(const Tensor& x, Ctx* ctx) const;

  // Accumulates parameter grads; returns grad w.r.t. x (rarely needed).
  Tensor backward(const Tensor& g_v, const Ctx& ctx);

  // Single image {3,R,R} in [0,255] image range -> embedding {embed_dim}.
  Tensor encode(const FeatureMap& x) const;

  void collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out);

  const DreConfig& config() const { return cfg_; }

 private:
  DreConfig cfg_;
  std::vector<nn::Conv2d<float>> convs_;
  nn::Linear<float> fc1_, fc2_;
};

// Query encoder plus its momentum-updated key twin.
struct EncoderPair {
  DreEncoder query, key;
  double momentum = 0.999;

  EncoderPair() = default;
  EncoderPair(const DreConfig& cfg, double m, Rng& rng);

  // key <- m*key + (1-m)*query, elementwise; query untouched.
  void momentum_update();
};

// Elementwise momentum rule over two aligned param lists; mismatched names or
// shapes raise invalid-state.
void momentum_update_params(std::vector<nn::ParamRef<float>>& key_params,
                            std::vector<nn::ParamRef<float>>& query_params, double m);

// Fixed-capacity FIFO of unit vectors. enqueue of a batch evicts the oldest
// batch once full. entries() is ordered oldest -> newest.
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(int capacity, int dim);

  // Fills to capacity with seeded random unit vectors so the loss is defined
  // from the first step (MoCo-style warm start).
  void prefill_random(uint64_t seed);

  void enqueue(const Tensor& batch);  // {B,dim}, unit rows
  Tensor entries() const;             // {size,dim}, oldest first

  int size() const { return size_; }
  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int64_t write_cursor() const { return cursor_; }

  // Checkpoint participation: raw ring storage plus cursor/size scalars.
  Tensor raw_storage() const;
  void restore(const Tensor& storage, int64_t cursor, int size);

 private:
  int capacity_ = 0, dim_ = 0, size_ = 0;
  int64_t cursor_ = 0;  // absolute write index; ring slot = cursor_ % capacity_
  std::vector<float> buf_;
};

// Contrastive loss over unit-norm rows. q, k0: {B,D}; negatives: {n,D}, n>=1.
// loss = sum_i -log( exp(q_i.k0_i/tau) / Z_i ) where Z_i includes the
// positive term by default; the literal variant excludes it. Returns
// gradients w.r.t. q and k0 (negatives are detached).
template <typename T>
struct InfoNceResult {
  double loss = 0;
  TensorT<T> grad_q, grad_k0;
};

template <typename T>
InfoNceResult<T> info_nce(const TensorT<T>& q, const TensorT<T>& k0, const TensorT<T>& negatives,
                          double tau, bool positive_in_denominator = true);

extern template InfoNceResult<float> info_nce<float>(const TensorT<float>&, const TensorT<float>&,
                                                     const TensorT<float>&, double, bool);
extern template InfoNceResult<double> info_nce<double>(const TensorT<double>&,
                                                       const TensorT<double>&,
                                                       const TensorT<double>&, double, bool);

// Pretraining: per step, each batch slot samples fresh degradation params,
// degrades two distinct pool images into a positive pair, and the query
// encoder takes one optimizer step against the queue; the key encoder follows
// by momentum and its batch is enqueued.
struct DreTrainResult {
  std::vector<std::pair<int, double>> loss_curve;  // (step, per-sample loss)
};

DreTrainResult pretrain_dre(const std::vector<FeatureMap>& hq_pool, const Config& cfg,
                            EncoderPair& pair, NegativeQueue& queue,
                            const std::string& log_path = "");

// Degradation ranges read from deg_* config keys (defaults per module docs).
ParamRanges ranges_from_config(const Config& cfg);

}  // namespace panini::drep
