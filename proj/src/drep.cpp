#include "panini/drep.hpp"

#include <cmath>
#include <fstream>

#include "panini/image_io.hpp"

namespace panini::drep {

namespace {
constexpr int kChannels[6] = {32, 64, 64, 128, 128, 256};
constexpr double kNormTolerance = 1e-3;  // row-norm check in info_nce

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }
}  // namespace

void DreConfig::validate() const {
  require(is_pow2(input_res) && input_res >= 8, "dre: input_res must be a power of two >= 8");
  require(embed_dim >= 1, "dre: embed_dim must be positive");
}

DreEncoder::DreEncoder(const DreConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  // enough stride-2 stages to land on 2x2, stride-1 for the rest
  int n_stride2 = 0;
  for (int r = cfg_.input_res; r > 2; r /= 2) ++n_stride2;
  require(n_stride2 <= 6, "dre: input_res too large for the 6-layer encoder");
  int in_ch = 3;
  for (int i = 0; i < 6; ++i) {
    const int stride = i < n_stride2 ? 2 : 1;
    convs_.emplace_back(in_ch, kChannels[i], 3, stride, 1);
    in_ch = kChannels[i];
  }
  fc1_ = nn::Linear<float>(kChannels[5], cfg_.embed_dim);
  fc2_ = nn::Linear<float>(cfg_.embed_dim, cfg_.embed_dim);
}

void DreEncoder::init(Rng& rng) {
  for (auto& c : convs_) c.init(rng, std::sqrt(2.0));
  fc1_.init(rng, std::sqrt(2.0));
  fc2_.init(rng, 1.0);
}

Tensor DreEncoder::forward(const Tensor& x, Ctx* ctx) const {
  require(x.rank() == 4 && x.dim(1) == 3, "dre encode: want {N,3,R,R}, got " + x.shape_str());
  if (x.dim(2) != cfg_.input_res || x.dim(3) != cfg_.input_res)
    throw InvalidArgument("dre encode: resolution mismatch, configured " +
                          std::to_string(cfg_.input_res) + " got " + x.shape_str());
  if (ctx) {
    ctx->conv_ctxs.resize(convs_.size());
    ctx->conv_acts.resize(convs_.size());
  }
  Tensor h = x;
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i].forward(h, ctx ? &ctx->conv_ctxs[i] : nullptr);
    h = nn::leaky_relu(h, 0.2f);
    if (ctx) ctx->conv_acts[i] = h;
  }
  if (ctx) ctx->gap_in_shape = h.shape();
  Tensor pooled = nn::global_avg_pool(h);
  Tensor p1 = fc1_.forward(pooled, ctx ? &ctx->fc1_ctx : nullptr);
  Tensor a1 = nn::leaky_relu(p1, 0.2f);
  if (ctx) ctx->hidden_act = a1;
  Tensor p2 = fc2_.forward(a1, ctx ? &ctx->fc2_ctx : nullptr);
  return nn::l2_normalize_rows(p2, ctx ? &ctx->l2_ctx : nullptr);
}

Tensor DreEncoder::backward(const Tensor& g_v, const Ctx& ctx) {
  Tensor g = nn::l2_normalize_rows_backward(g_v, ctx.l2_ctx);
  g = fc2_.backward(g, ctx.fc2_ctx);
  g = nn::leaky_relu_backward(g, ctx.hidden_act, 0.2f);
  g = fc1_.backward(g, ctx.fc1_ctx);
  Tensor gh = nn::global_avg_pool_backward(g, ctx.gap_in_shape);
  for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
    gh = nn::leaky_relu_backward(gh, ctx.conv_acts[static_cast<size_t>(i)], 0.2f);
    gh = convs_[static_cast<size_t>(i)].backward(gh, ctx.conv_ctxs[static_cast<size_t>(i)]);
  }
  return gh;
}

Tensor DreEncoder::encode(const FeatureMap& x) const {
  require(x.rank() == 3 && x.dim(0) == 3, "dre encode: want {3,R,R}");
  Tensor batch = to_net_range(x).reshaped({1, 3, x.dim(1), x.dim(2)});
  Tensor v = forward(batch, nullptr);
  return v.reshaped({cfg_.embed_dim});
}

void DreEncoder::collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out) {
  for (size_t i = 0; i < convs_.size(); ++i)
    convs_[i].collect_params(prefix + ".conv" + std::to_string(i), out);
  fc1_.collect_params(prefix + ".fc1", out);
  fc2_.collect_params(prefix + ".fc2", out);
}

EncoderPair::EncoderPair(const DreConfig& cfg, double m, Rng& rng)
    : query(cfg), key(cfg), momentum(m) {
  require(m >= 0.0 && m < 1.0, "momentum coefficient must lie in [0,1)");
  query.init(rng);
  // key starts as an exact copy
  std::vector<nn::ParamRef<float>> qp, kp;
  query.collect_params("dre", qp);
  key.collect_params("dre", kp);
  for (size_t i = 0; i < qp.size(); ++i) *kp[i].value = *qp[i].value;
}

void EncoderPair::momentum_update() {
  std::vector<nn::ParamRef<float>> qp, kp;
  query.collect_params("dre", qp);
  key.collect_params("dre", kp);
  momentum_update_params(kp, qp, momentum);
}

void momentum_update_params(std::vector<nn::ParamRef<float>>& key_params,
                            std::vector<nn::ParamRef<float>>& query_params, double m) {
  if (key_params.size() != query_params.size())
    throw InvalidState("momentum_update: param list size mismatch");
  for (size_t i = 0; i < key_params.size(); ++i) {
    Tensor& k = *key_params[i].value;
    const Tensor& q = *query_params[i].value;
    if (!(k.shape() == q.shape()))
      throw InvalidState("momentum_update: shape mismatch at " + key_params[i].name);
    for (int64_t j = 0; j < k.numel(); ++j)
      k[j] = static_cast<float>(m * k[j] + (1.0 - m) * q[j]);
  }
}

NegativeQueue::NegativeQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
  require(capacity >= 1 && dim >= 1, "queue: capacity and dim must be positive");
  buf_.assign(static_cast<size_t>(capacity) * dim, 0.0f);
}

void NegativeQueue::prefill_random(uint64_t seed) {
  Rng rng(seed);
  for (int i = 0; i < capacity_; ++i) {
    double norm_sq = 0.0;
    std::vector<double> v(static_cast<size_t>(dim_));
    for (auto& x : v) {
      x = rng.normal();
      norm_sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm_sq + 1e-12);
    for (int j = 0; j < dim_; ++j)
      buf_[static_cast<size_t>(i) * dim_ + j] = static_cast<float>(v[static_cast<size_t>(j)] * inv);
  }
  size_ = capacity_;
  cursor_ = capacity_;
}

void NegativeQueue::enqueue(const Tensor& batch) {
  require(batch.rank() == 2 && batch.dim(1) == dim_, "queue: batch dim mismatch");
  for (int i = 0; i < batch.dim(0); ++i) {
    const size_t slot = static_cast<size_t>(cursor_ % capacity_);
    std::copy(batch.data() + static_cast<int64_t>(i) * dim_,
              batch.data() + static_cast<int64_t>(i + 1) * dim_, buf_.begin() + slot * dim_);
    ++cursor_;
    if (size_ < capacity_) ++size_;
  }
}

Tensor NegativeQueue::entries() const {
  Tensor out({size_, dim_});
  // oldest slot: cursor - size (mod capacity)
  for (int i = 0; i < size_; ++i) {
    const size_t slot = static_cast<size_t>((cursor_ - size_ + i) % capacity_);
    std::copy(buf_.begin() + slot * dim_, buf_.begin() + (slot + 1) * dim_,
              out.data() + static_cast<int64_t>(i) * dim_);
  }
  return out;
}

Tensor NegativeQueue::raw_storage() const {
  Tensor out({capacity_, dim_});
  std::copy(buf_.begin(), buf_.end(), out.data());
  return out;
}

void NegativeQueue::restore(const Tensor& storage, int64_t cursor, int size) {
  require(storage.rank() == 2 && storage.dim(0) == capacity_ && storage.dim(1) == dim_,
          "queue restore: storage shape mismatch");
  require(size >= 0 && size <= capacity_ && cursor >= size, "queue restore: bad cursor/size");
  std::copy(storage.data(), storage.data() + storage.numel(), buf_.begin());
  cursor_ = cursor;
  size_ = size;
}

template <typename T>
InfoNceResult<T> info_nce(const TensorT<T>& q, const TensorT<T>& k0, const TensorT<T>& negatives,
                          double tau, bool positive_in_denominator) {
  if (tau <= 0.0) throw InvalidArgument("info_nce: tau must be positive");
  if (!(q.rank() == 2 && q.same_shape(k0)))
    throw InvalidArgument("info_nce: q and k0 must be matching {B,D} tensors");
  if (!(negatives.rank() == 2 && negatives.dim(1) == q.dim(1) && negatives.dim(0) >= 1))
    throw InvalidArgument("info_nce: queue must be non-empty with matching dim");
  const int b = q.dim(0), d = q.dim(1), n = negatives.dim(0);
  auto check_rows = [d](const TensorT<T>& m, const char* what) {
    for (int i = 0; i < m.dim(0); ++i) {
      double s = 0;
      for (int j = 0; j < d; ++j) s += static_cast<double>(m.at2(i, j)) * m.at2(i, j);
      if (std::abs(std::sqrt(s) - 1.0) > kNormTolerance)
        throw InvalidArgument(std::string("info_nce: ") + what + " row " + std::to_string(i) +
                              " is not unit-norm");
    }
  };
  check_rows(q, "q");
  check_rows(k0, "k0");

  InfoNceResult<T> out;
  out.grad_q = TensorT<T>({b, d});
  out.grad_k0 = TensorT<T>({b, d});
  const double inv_tau = 1.0 / tau;
  std::vector<double> logits(static_cast<size_t>(n) + 1);
  for (int i = 0; i < b; ++i) {
    double l_pos = 0;
    for (int j = 0; j < d; ++j) l_pos += static_cast<double>(q.at2(i, j)) * k0.at2(i, j);
    l_pos *= inv_tau;
    logits[0] = l_pos;
    for (int t = 0; t < n; ++t) {
      double s = 0;
      for (int j = 0; j < d; ++j) s += static_cast<double>(q.at2(i, j)) * negatives.at2(t, j);
      logits[static_cast<size_t>(t) + 1] = s * inv_tau;
    }
    const size_t lo = positive_in_denominator ? 0 : 1;
    double mx = logits[lo];
    for (size_t t = lo; t < logits.size(); ++t) mx = std::max(mx, logits[t]);
    double z = 0;
    for (size_t t = lo; t < logits.size(); ++t) z += std::exp(logits[t] - mx);
    const double lse = mx + std::log(z);
    out.loss += lse - l_pos;

    // d loss_i / d logit: softmax over the denominator terms, minus 1 on the
    // positive slot (which participates even in the literal variant through
    // the -l_pos term).
    std::vector<double> dlogit(logits.size(), 0.0);
    for (size_t t = lo; t < logits.size(); ++t) dlogit[t] = std::exp(logits[t] - lse);
    dlogit[0] -= 1.0;
    for (int j = 0; j < d; ++j) {
      double gq = dlogit[0] * inv_tau * k0.at2(i, j);
      for (int t = 0; t < n; ++t)
        gq += dlogit[static_cast<size_t>(t) + 1] * inv_tau * negatives.at2(t, j);
      out.grad_q.at2(i, j) = static_cast<T>(gq);
      out.grad_k0.at2(i, j) = static_cast<T>(dlogit[0] * inv_tau * q.at2(i, j));
    }
  }
  return out;
}

template InfoNceResult<float> info_nce<float>(const TensorT<float>&, const TensorT<float>&,
                                              const TensorT<float>&, double, bool);
template InfoNceResult<double> info_nce<double>(const TensorT<double>&, const TensorT<double>&,
                                                const TensorT<double>&, double, bool);

ParamRanges ranges_from_config(const Config& cfg) {
  ParamRanges r;
  r.blur_sigma = {cfg.get_double("deg_sigma_lo", 0.2), cfg.get_double("deg_sigma_hi", 6.0)};
  r.down_rate = {cfg.get_double("deg_rate_lo", 1.0), cfg.get_double("deg_rate_hi", 8.0)};
  r.noise_std = {cfg.get_double("deg_noise_lo", 0.0), cfg.get_double("deg_noise_hi", 25.0)};
  r.jpeg_quality = {cfg.get_double("deg_quality_lo", 5), cfg.get_double("deg_quality_hi", 50)};
  r.validate();
  return r;
}

DreTrainResult pretrain_dre(const std::vector<FeatureMap>& hq_pool, const Config& cfg,
                            EncoderPair& pair, NegativeQueue& queue,
                            const std::string& log_path) {
  if (hq_pool.size() < 2)
    throw InvalidArgument("pretrain_dre: need at least 2 distinct images, got " +
                          std::to_string(hq_pool.size()));
  const int steps = static_cast<int>(cfg.get_int("udrl_steps", 1500));
  const int batch = static_cast<int>(cfg.get_int("udrl_batch", 32));
  const double tau = cfg.get_double("udrl_tau", 0.07);
  const bool literal = cfg.get_bool("udrl_literal_denominator", false);
  const double lr = cfg.get_double("udrl_lr", 2e-3);
  const double min_lr = cfg.get_double("udrl_min_lr", 1e-4);
  const uint64_t seed = cfg.get_u64("seed", 0);
  const int res = pair.query.config().input_res;
  const ParamRanges ranges = ranges_from_config(cfg);

  std::vector<nn::ParamRef<float>> q_params;
  pair.query.collect_params("dre", q_params);
  nn::Adam<float> adam;
  nn::CosineSchedule sched{lr, min_lr, steps};
  Rng rng(derive_seed(seed, 0xD2E));

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IoError("pretrain_dre: cannot write log " + log_path);
    log << "step,loss\n";
  }

  DreTrainResult result;
  for (int step = 0; step < steps; ++step) {
    Tensor k0_in({batch, 3, res, res});
    Tensor q_in({batch, 3, res, res});
    for (int s = 0; s < batch; ++s) {
      const int ia = rng.uniform_int(0, static_cast<int>(hq_pool.size()) - 1);
      int ib = rng.uniform_int(0, static_cast<int>(hq_pool.size()) - 2);
      if (ib >= ia) ++ib;  // never pair an image with itself
      DegradationParams p = sample_params(ranges, rng.next_u64());
      auto [da, db] = make_positive_pair(hq_pool[static_cast<size_t>(ia)],
                                         hq_pool[static_cast<size_t>(ib)], p);
      Tensor qa = to_net_range(resize_bilinear(da, res, res));
      Tensor kb = to_net_range(resize_bilinear(db, res, res));
      std::copy(qa.data(), qa.data() + qa.numel(),
                q_in.data() + static_cast<int64_t>(s) * qa.numel());
      std::copy(kb.data(), kb.data() + kb.numel(),
                k0_in.data() + static_cast<int64_t>(s) * kb.numel());
    }

    DreEncoder::Ctx qctx;
    Tensor q_emb = pair.query.forward(q_in, &qctx);
    Tensor k_emb = pair.key.forward(k0_in, nullptr);  // detached: no ctx, no grads

    auto nce = info_nce<float>(q_emb, k_emb, queue.entries(), tau, !literal);
    const double loss_per_sample = nce.loss / batch;
    if (!std::isfinite(loss_per_sample))
      throw TrainingDiverged("pretrain_dre: non-finite loss at step " + std::to_string(step));

    nn::zero_grads(q_params);
    Tensor g = nce.grad_q;
    g.scale(1.0f / static_cast<float>(batch));
    pair.query.backward(g, qctx);
    adam.step(q_params, sched.lr_at(step));
    pair.momentum_update();
    queue.enqueue(k_emb);

    result.loss_curve.emplace_back(step, loss_per_sample);
    if (log) log << step << "," << loss_per_sample << "\n";
  }
  return result;
}

}  // namespace panini::drep
