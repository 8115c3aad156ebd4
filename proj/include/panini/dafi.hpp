#pragma once

#include <string>
#include <vector>

#include "panini/nn.hpp"
#include "panini/tensor.hpp"

// Degradation-aware feature interpolation: a per-level MLP turns the
// degradation embedding into paired logits, a per-channel 2-way softmax turns
// those into a convex mask, and fused features are the channel-wise convex
// blend of prior features and image features. Also provides the usage-ratio
// diagnostic, single-source masking for dissection, direct mask biasing for
// editing, and the concatenate-then-convolve alternate fusion used by the
// ablation harness.

namespace panini::dafi {

// Per-channel convex interpolation mask for one fusion level. weights[c] is
// the prior-feature coefficient; the complement 1-weights[c] multiplies the
// image-feature branch.
template <typename T>
struct MaskT {
  int level = 0;
  std::vector<T> weights;

  int channels() const { return static_cast<int>(weights.size()); }
};

using Mask = MaskT<float>;

// ---------------------------------------------------------------------------
// Paired softmax over logits {N,2,C}: out[n,:,c] = softmax(logits[n,:,c]).
// Max-subtracted for stability.

template <typename T>
TensorT<T> pair_softmax(const TensorT<T>& logits) {
  require(logits.rank() == 3 && logits.dim(1) == 2, "pair_softmax: want {N,2,C}");
  const int n = logits.dim(0), c = logits.dim(2);
  TensorT<T> p({n, 2, c});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      const T a = logits.at3(i, 0, j), b = logits.at3(i, 1, j);
      const T m = std::max(a, b);
      const T ea = std::exp(a - m), eb = std::exp(b - m);
      const T z = ea + eb;
      p.at3(i, 0, j) = ea / z;
      p.at3(i, 1, j) = eb / z;
    }
  return p;
}

template <typename T>
TensorT<T> pair_softmax_backward(const TensorT<T>& gp, const TensorT<T>& p) {
  const int n = p.dim(0), c = p.dim(2);
  TensorT<T> gl({n, 2, c});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      const T dot =
          gp.at3(i, 0, j) * p.at3(i, 0, j) + gp.at3(i, 1, j) * p.at3(i, 1, j);
      gl.at3(i, 0, j) = p.at3(i, 0, j) * (gp.at3(i, 0, j) - dot);
      gl.at3(i, 1, j) = p.at3(i, 1, j) * (gp.at3(i, 1, j) - dot);
    }
  return gl;
}

// ---------------------------------------------------------------------------
// Fusion head: 256 -> hidden -> 2C MLP with leaky-ReLU, paired softmax on the
// reshaped (2,C) output. One head per fused level; heads are not shared.

template <typename T>
class FusionHeadT {
 public:
  FusionHeadT() = default;
  FusionHeadT(int level, int channels, int hidden, int embed_dim = 256)
      : level_(level), channels_(channels),
        fc1_(embed_dim, hidden), fc2_(hidden, 2 * channels) {}

  void init(Rng& rng) {
    fc1_.init(rng, std::sqrt(2.0));
    fc2_.init(rng, 1.0);
  }

  struct Ctx {
    typename nn::Linear<T>::Ctx c1, c2;
    TensorT<T> h_act;   // post-activation hidden
    TensorT<T> probs;   // {N,2,C}
  };

  // v: {N,embed_dim} unit-norm rows. Returns pair-probabilities {N,2,C};
  // row 0 is the mask, row 1 its complement.
  TensorT<T> forward(const TensorT<T>& v, Ctx* ctx) const {
    require(v.rank() == 2 && v.dim(1) == fc1_.in_, "make_mask: embedding dim mismatch, got " +
                                                       v.shape_str());
    TensorT<T> h = fc1_.forward(v, ctx ? &ctx->c1 : nullptr);
    TensorT<T> ha = nn::leaky_relu(h, T(0.2));
    TensorT<T> logits = fc2_.forward(ha, ctx ? &ctx->c2 : nullptr);
    TensorT<T> probs = pair_softmax(logits.reshaped({v.dim(0), 2, channels_}));
    if (ctx) {
      ctx->h_act = std::move(ha);
      ctx->probs = probs;
    }
    return probs;
  }

  // g_probs: {N,2,C}. Accumulates head grads; returns gradient w.r.t. v.
  TensorT<T> backward(const TensorT<T>& g_probs, const Ctx& ctx) {
    TensorT<T> gl = pair_softmax_backward(g_probs, ctx.probs);
    TensorT<T> gh = fc2_.backward(gl.reshaped({g_probs.dim(0), 2 * channels_}), ctx.c2);
    gh = nn::leaky_relu_backward(gh, ctx.h_act, T(0.2));
    return fc1_.backward(gh, ctx.c1);
  }

  MaskT<T> make_mask(const TensorT<T>& v_single) const {
    TensorT<T> v = v_single.rank() == 1 ? v_single.reshaped({1, v_single.dim(0)}) : v_single;
    TensorT<T> probs = forward(v, nullptr);
    MaskT<T> m;
    m.level = level_;
    m.weights.resize(static_cast<size_t>(channels_));
    for (int c = 0; c < channels_; ++c) m.weights[static_cast<size_t>(c)] = probs.at3(0, 0, c);
    return m;
  }

  void collect_params(const std::string& prefix, std::vector<nn::ParamRef<T>>& out) {
    fc1_.collect_params(prefix + ".fc1", out);
    fc2_.collect_params(prefix + ".fc2", out);
  }

  int level() const { return level_; }
  int channels() const { return channels_; }
  int64_t param_count() const {
    return static_cast<int64_t>(fc1_.in_) * fc1_.out_ + fc1_.out_ +
           static_cast<int64_t>(fc2_.in_) * fc2_.out_ + fc2_.out_;
  }

  int level_ = 0, channels_ = 0;
  nn::Linear<T> fc1_, fc2_;
};

using FusionHead = FusionHeadT<float>;

// ---------------------------------------------------------------------------
// Convex interpolation out = mask*f_gpb + (1-mask)*f_ife, channel-wise.
// Single-sample ({C,H,W} + Mask) and batched ({N,C,H,W} + probs {N,2,C}).

template <typename T>
TensorT<T> interpolate(const TensorT<T>& f_gpb, const TensorT<T>& f_ife, const MaskT<T>& mask) {
  require(f_gpb.same_shape(f_ife),
          "interpolate: shape mismatch " + f_gpb.shape_str() + " vs " + f_ife.shape_str());
  require(f_gpb.rank() == 3, "interpolate: want {C,H,W}");
  require(f_gpb.dim(0) == mask.channels(), "interpolate: mask length != channel count");
  TensorT<T> out(f_gpb.shape());
  for (int c = 0; c < f_gpb.dim(0); ++c) {
    const T m = mask.weights[static_cast<size_t>(c)];
    for (int y = 0; y < f_gpb.dim(1); ++y)
      for (int x = 0; x < f_gpb.dim(2); ++x)
        out.at3(c, y, x) = m * f_gpb.at3(c, y, x) + (T(1) - m) * f_ife.at3(c, y, x);
  }
  return out;
}

template <typename T>
TensorT<T> interpolate_batched(const TensorT<T>& f_gpb, const TensorT<T>& f_ife,
                               const TensorT<T>& probs) {
  require(f_gpb.same_shape(f_ife), "interpolate: shape mismatch");
  require(f_gpb.rank() == 4 && probs.rank() == 3 && probs.dim(0) == f_gpb.dim(0) &&
              probs.dim(2) == f_gpb.dim(1),
          "interpolate: batched shape mismatch");
  TensorT<T> out(f_gpb.shape());
  for (int n = 0; n < f_gpb.dim(0); ++n)
    for (int c = 0; c < f_gpb.dim(1); ++c) {
      const T m = probs.at3(n, 0, c);
      for (int y = 0; y < f_gpb.dim(2); ++y)
        for (int x = 0; x < f_gpb.dim(3); ++x)
          out.at4(n, c, y, x) = m * f_gpb.at4(n, c, y, x) + (T(1) - m) * f_ife.at4(n, c, y, x);
    }
  return out;
}

// Gradients of interpolate_batched. g_probs row 1 receives the complement
// gradient so it chains straight into pair_softmax_backward.
template <typename T>
struct InterpolateGrads {
  TensorT<T> g_gpb, g_ife, g_probs;
};

template <typename T>
InterpolateGrads<T> interpolate_batched_backward(const TensorT<T>& gy, const TensorT<T>& f_gpb,
                                                 const TensorT<T>& f_ife,
                                                 const TensorT<T>& probs) {
  InterpolateGrads<T> g;
  g.g_gpb = TensorT<T>(f_gpb.shape());
  g.g_ife = TensorT<T>(f_ife.shape());
  g.g_probs = TensorT<T>(probs.shape());
  for (int n = 0; n < f_gpb.dim(0); ++n)
    for (int c = 0; c < f_gpb.dim(1); ++c) {
      const T m = probs.at3(n, 0, c);
      T acc = 0;
      for (int y = 0; y < f_gpb.dim(2); ++y)
        for (int x = 0; x < f_gpb.dim(3); ++x) {
          const T gv = gy.at4(n, c, y, x);
          g.g_gpb.at4(n, c, y, x) = gv * m;
          g.g_ife.at4(n, c, y, x) = gv * (T(1) - m);
          acc += gv * (f_gpb.at4(n, c, y, x) - f_ife.at4(n, c, y, x));
        }
      g.g_probs.at3(n, 0, c) = acc;
      g.g_probs.at3(n, 1, c) = 0;
    }
  return g;
}

// ---------------------------------------------------------------------------

// theta = mean of mask weights: the fraction of prior-feature usage.
template <typename T>
double usage_ratio(const MaskT<T>& mask) {
  require(mask.channels() > 0, "usage_ratio: empty mask");
  double s = 0;
  for (const T w : mask.weights) s += static_cast<double>(w);
  return s / mask.channels();
}

enum class Source { gpb, ife };

Source parse_source(const std::string& tag);

// source=gpb -> mask*f; source=ife -> (1-mask)*f.
template <typename T>
TensorT<T> masked_single_source(const TensorT<T>& f, const MaskT<T>& mask, Source source) {
  require(f.rank() == 3, "masked_single_source: want {C,H,W}");
  require(f.dim(0) == mask.channels(), "masked_single_source: mask length != channel count");
  TensorT<T> out(f.shape());
  for (int c = 0; c < f.dim(0); ++c) {
    const T m = mask.weights[static_cast<size_t>(c)];
    const T w = source == Source::gpb ? m : T(1) - m;
    for (int y = 0; y < f.dim(1); ++y)
      for (int x = 0; x < f.dim(2); ++x) out.at3(c, y, x) = w * f.at3(c, y, x);
  }
  return out;
}

// Editing: weight <- clamp(weight + bias, eps, 1-eps). bias=0 is an exact
// identity (no clamping applied), so the unedited column of an edit sweep is
// bit-identical to plain restoration.
template <typename T>
MaskT<T> bias_mask(const MaskT<T>& mask, double bias) {
  require(std::isfinite(bias), "bias_mask: bias must be finite");
  if (bias == 0.0) return mask;
  constexpr double eps = 1e-6;
  MaskT<T> out = mask;
  for (auto& w : out.weights) {
    double v = static_cast<double>(w) + bias;
    v = std::min(1.0 - eps, std::max(eps, v));
    w = static_cast<T>(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cat-Conv alternate fusion: channel concat then one 3x3 conv 2C -> C.

class CatConvHead {
 public:
  CatConvHead() = default;
  CatConvHead(int level, int channels) : level_(level), conv_(2 * channels, channels, 3, 1, 1) {}

  void init(Rng& rng) { conv_.init(rng, 1.0); }

  struct Ctx {
    nn::Conv2d<float>::Ctx conv_ctx;
  };

  Tensor forward(const Tensor& f_gpb, const Tensor& f_ife, Ctx* ctx) const;
  // Returns {g_gpb, g_ife}; accumulates conv grads.
  std::pair<Tensor, Tensor> backward(const Tensor& gy, const Ctx& ctx);

  void collect_params(const std::string& prefix, std::vector<nn::ParamRef<float>>& out) {
    conv_.collect_params(prefix + ".conv", out);
  }

  int level() const { return level_; }
  int channels() const { return conv_.out_channels(); }
  int64_t param_count() const;
  nn::Conv2d<float>& conv() { return conv_; }

 private:
  int level_ = 0;
  nn::Conv2d<float> conv_;
};

// Exact parameter counts for the two fusion-head designs at channel width c.
int64_t dafi_head_param_count(int channels, int hidden, int embed_dim = 256);
int64_t cat_conv_head_param_count(int channels);

// CSV dump for the dissection CLI: "channel,weight" rows.
std::string mask_to_csv(const Mask& mask);

}  // namespace panini::dafi
