#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "panini/tensor.hpp"

// Minimal explicit-backward neural network core. Layers are const during
// forward; everything backward needs is kept in per-call context structs, so
// a trained model can serve concurrent inference from multiple threads.
// Templated on the scalar so the finite-difference gradient checks can run
// the same code in double precision.

namespace panini::nn {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

template <typename T>
struct ParamRef {
  std::string name;
  TensorT<T>* value = nullptr;
  TensorT<T>* grad = nullptr;
};

template <typename T>
int64_t param_count(const std::vector<ParamRef<T>>& refs) {
  int64_t n = 0;
  for (const auto& r : refs) n += r.value->numel();
  return n;
}

template <typename T>
void zero_grads(std::vector<ParamRef<T>>& refs) {
  for (auto& r : refs) r.grad->zero();
}

// ---------------------------------------------------------------------------
// im2col helpers

template <typename T>
void im2col(const TensorT<T>& x, int n, int k, int stride, int pad, int oh, int ow,
            MatrixRM<T>& cols) {
  const int ic = x.dim(1), h = x.dim(2), w = x.dim(3);
  cols.resize(static_cast<Eigen::Index>(ic) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < ic; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        Eigen::Index col = 0;
        for (int oy = 0; oy < oh; ++oy) {
          const int sy = oy * stride - pad + ky;
          for (int ox = 0; ox < ow; ++ox, ++col) {
            const int sx = ox * stride - pad + kx;
            cols(row, col) = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                 ? x.at4(n, c, sy, sx)
                                 : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const MatrixRM<T>& cols, int n, int k, int stride, int pad, int oh, int ow,
                TensorT<T>& gx) {
  const int ic = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  for (int c = 0; c < ic; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        Eigen::Index col = 0;
        for (int oy = 0; oy < oh; ++oy) {
          const int sy = oy * stride - pad + ky;
          for (int ox = 0; ox < ow; ++ox, ++col) {
            const int sx = ox * stride - pad + kx;
            if (sy >= 0 && sy < h && sx >= 0 && sx < w) gx.at4(n, c, sy, sx) += cols(row, col);
          }
        }
      }
    }
  }
}

// floor convention: trailing rows/cols that do not fill a window are dropped
inline int conv_out_dim(int in, int k, int stride, int pad) {
  const int num = in + 2 * pad - k;
  require(num >= 0, "conv: input smaller than kernel");
  return num / stride + 1;
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad),
        w({out_ch, in_ch, kernel, kernel}), b({out_ch}),
        gw({out_ch, in_ch, kernel, kernel}), gb({out_ch}) {}

  // He-style init; gain 1 for output/projection layers, sqrt(2) before relus.
  void init(Rng& rng, double gain) {
    const double fan_in = static_cast<double>(in_ch_) * k_ * k_;
    w.randn(rng, gain / std::sqrt(fan_in));
    b.zero();
  }

  struct Ctx {
    TensorT<T> x;
  };

  TensorT<T> forward(const TensorT<T>& x, Ctx* ctx) const {
    require(x.rank() == 4 && x.dim(1) == in_ch_, "conv: bad input shape " + x.shape_str());
    const int n = x.dim(0);
    const int oh = conv_out_dim(x.dim(2), k_, stride_, pad_);
    const int ow = conv_out_dim(x.dim(3), k_, stride_, pad_);
    TensorT<T> y({n, out_ch_, oh, ow});
    ConstMapRM<T> wm(w.data(), out_ch_, static_cast<Eigen::Index>(in_ch_) * k_ * k_);
    MatrixRM<T> cols;
    for (int i = 0; i < n; ++i) {
      im2col(x, i, k_, stride_, pad_, oh, ow, cols);
      MapRM<T> ym(y.data() + static_cast<size_t>(i) * out_ch_ * oh * ow, out_ch_,
                  static_cast<Eigen::Index>(oh) * ow);
      ym.noalias() = wm * cols;
      for (int oc = 0; oc < out_ch_; ++oc) ym.row(oc).array() += b[oc];
    }
    if (ctx) ctx->x = x;
    return y;
  }

  TensorT<T> backward(const TensorT<T>& gy, const Ctx& ctx) {
    const TensorT<T>& x = ctx.x;
    const int n = x.dim(0);
    const int oh = gy.dim(2), ow = gy.dim(3);
    TensorT<T> gx(x.shape());
    ConstMapRM<T> wm(w.data(), out_ch_, static_cast<Eigen::Index>(in_ch_) * k_ * k_);
    MapRM<T> gwm(gw.data(), out_ch_, static_cast<Eigen::Index>(in_ch_) * k_ * k_);
    MatrixRM<T> cols, gcols;
    for (int i = 0; i < n; ++i) {
      ConstMapRM<T> gym(gy.data() + static_cast<size_t>(i) * out_ch_ * oh * ow, out_ch_,
                        static_cast<Eigen::Index>(oh) * ow);
      im2col(x, i, k_, stride_, pad_, oh, ow, cols);
      gwm.noalias() += gym * cols.transpose();
      for (int oc = 0; oc < out_ch_; ++oc) gb[oc] += gym.row(oc).sum();
      gcols.noalias() = wm.transpose() * gym;
      col2im_add(gcols, i, k_, stride_, pad_, oh, ow, gx);
    }
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".w", &w, &gw});
    out.push_back({prefix + ".b", &b, &gb});
  }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }

  int in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  TensorT<T> w, b, gw, gb;
};

// ---------------------------------------------------------------------------
// Linear

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_dim, int out_dim)
      : in_(in_dim), out_(out_dim), w({out_dim, in_dim}), b({out_dim}),
        gw({out_dim, in_dim}), gb({out_dim}) {}

  void init(Rng& rng, double gain) {
    w.randn(rng, gain / std::sqrt(static_cast<double>(in_)));
    b.zero();
  }

  struct Ctx {
    TensorT<T> x;
  };

  TensorT<T> forward(const TensorT<T>& x, Ctx* ctx) const {
    require(x.rank() == 2 && x.dim(1) == in_, "linear: bad input shape " + x.shape_str());
    const int n = x.dim(0);
    TensorT<T> y({n, out_});
    ConstMapRM<T> xm(x.data(), n, in_);
    ConstMapRM<T> wm(w.data(), out_, in_);
    MapRM<T> ym(y.data(), n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_; ++j) ym(i, j) += b[j];
    if (ctx) ctx->x = x;
    return y;
  }

  TensorT<T> backward(const TensorT<T>& gy, const Ctx& ctx) {
    const int n = ctx.x.dim(0);
    TensorT<T> gx({n, in_});
    ConstMapRM<T> xm(ctx.x.data(), n, in_);
    ConstMapRM<T> gym(gy.data(), n, out_);
    ConstMapRM<T> wm(w.data(), out_, in_);
    MapRM<T> gwm(gw.data(), out_, in_);
    MapRM<T> gxm(gx.data(), n, in_);
    gwm.noalias() += gym.transpose() * xm;
    for (int j = 0; j < out_; ++j) gb[j] += gym.col(j).sum();
    gxm.noalias() = gym * wm;
    return gx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".w", &w, &gw});
    out.push_back({prefix + ".b", &b, &gb});
  }

  int in_ = 0, out_ = 0;
  TensorT<T> w, b, gw, gb;
};

// ---------------------------------------------------------------------------
// Activations. Backward derives from the forward output where possible.

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope) {
  TensorT<T> y = x;
  for (int64_t i = 0; i < y.numel(); ++i)
    if (y[i] < T(0)) y[i] *= slope;
  return y;
}

template <typename T>
TensorT<T> leaky_relu_backward(const TensorT<T>& gy, const TensorT<T>& y, T slope) {
  TensorT<T> gx = gy;
  for (int64_t i = 0; i < gx.numel(); ++i)
    if (y[i] < T(0)) gx[i] *= slope;
  return gx;
}

template <typename T>
TensorT<T> tanh_fwd(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(y[i]);
  return y;
}

template <typename T>
TensorT<T> tanh_backward(const TensorT<T>& gy, const TensorT<T>& y) {
  TensorT<T> gx = gy;
  for (int64_t i = 0; i < gx.numel(); ++i) gx[i] *= (T(1) - y[i] * y[i]);
  return gx;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsample

template <typename T>
TensorT<T> upsample2x(const TensorT<T>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorT<T> y({n, c, h * 2, w * 2});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < h * 2; ++yy)
        for (int xx = 0; xx < w * 2; ++xx)
          y.at4(i, ch, yy, xx) = x.at4(i, ch, yy / 2, xx / 2);
  return y;
}

template <typename T>
TensorT<T> upsample2x_backward(const TensorT<T>& gy) {
  const int n = gy.dim(0), c = gy.dim(1), h = gy.dim(2) / 2, w = gy.dim(3) / 2;
  TensorT<T> gx({n, c, h, w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < gy.dim(2); ++yy)
        for (int xx = 0; xx < gy.dim(3); ++xx)
          gx.at4(i, ch, yy / 2, xx / 2) += gy.at4(i, ch, yy, xx);
  return gx;
}

// ---------------------------------------------------------------------------
// Global average pool {N,C,H,W} -> {N,C}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  const int n = x.dim(0), c = x.dim(1);
  const T inv = T(1) / static_cast<T>(x.dim(2) * x.dim(3));
  TensorT<T> y({n, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      T s = 0;
      for (int yy = 0; yy < x.dim(2); ++yy)
        for (int xx = 0; xx < x.dim(3); ++xx) s += x.at4(i, ch, yy, xx);
      y.at2(i, ch) = s * inv;
    }
  return y;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& gy, const std::vector<int>& x_shape) {
  TensorT<T> gx(x_shape);
  const T inv = T(1) / static_cast<T>(x_shape[2] * x_shape[3]);
  for (int i = 0; i < x_shape[0]; ++i)
    for (int ch = 0; ch < x_shape[1]; ++ch) {
      const T g = gy.at2(i, ch) * inv;
      for (int yy = 0; yy < x_shape[2]; ++yy)
        for (int xx = 0; xx < x_shape[3]; ++xx) gx.at4(i, ch, yy, xx) = g;
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Row-wise L2 normalization, {N,D}

template <typename T>
struct L2NormCtx {
  TensorT<T> y;
  std::vector<T> norms;
};

template <typename T>
TensorT<T> l2_normalize_rows(const TensorT<T>& x, L2NormCtx<T>* ctx) {
  const int n = x.dim(0), d = x.dim(1);
  TensorT<T> y = x;
  std::vector<T> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    T s = 0;
    for (int j = 0; j < d; ++j) s += x.at2(i, j) * x.at2(i, j);
    const T nrm = std::sqrt(s + T(1e-12));
    norms[static_cast<size_t>(i)] = nrm;
    for (int j = 0; j < d; ++j) y.at2(i, j) /= nrm;
  }
  if (ctx) {
    ctx->y = y;
    ctx->norms = std::move(norms);
  }
  return y;
}

template <typename T>
TensorT<T> l2_normalize_rows_backward(const TensorT<T>& gy, const L2NormCtx<T>& ctx) {
  const int n = gy.dim(0), d = gy.dim(1);
  TensorT<T> gx({n, d});
  for (int i = 0; i < n; ++i) {
    T dot = 0;
    for (int j = 0; j < d; ++j) dot += gy.at2(i, j) * ctx.y.at2(i, j);
    for (int j = 0; j < d; ++j)
      gx.at2(i, j) = (gy.at2(i, j) - ctx.y.at2(i, j) * dot) / ctx.norms[static_cast<size_t>(i)];
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Style-modulated convolution (weight modulation + demodulation), 3x3, pad 1,
// optional nearest 2x upsample of the input first. Modulation is per sample.

template <typename T>
class ModulatedConv2d {
 public:
  ModulatedConv2d() = default;
  ModulatedConv2d(int in_ch, int out_ch, int latent_dim, bool upsample)
      : in_ch_(in_ch), out_ch_(out_ch), up_(upsample),
        w({out_ch, in_ch, 3, 3}), b({out_ch}), gw({out_ch, in_ch, 3, 3}), gb({out_ch}),
        affine_(latent_dim, in_ch) {}

  void init(Rng& rng) {
    const double fan_in = static_cast<double>(in_ch_) * 9;
    w.randn(rng, 1.0 / std::sqrt(fan_in));
    b.zero();
    affine_.init(rng, 1.0);
    affine_.b.fill(T(1));  // styles start at identity
  }

  struct Ctx {
    TensorT<T> x_up;           // conv input (after upsample when enabled)
    TensorT<T> styles;         // {N,IC}
    TensorT<T> demod;          // {N,OC}
    typename Linear<T>::Ctx affine_ctx;
    bool upsampled = false;
  };

  // x: {N,IC,H,W}; w_row: {N,latent_dim}. Returns {N,OC,H',W'}.
  TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& w_row, Ctx* ctx) const {
    require(x.rank() == 4 && x.dim(1) == in_ch_, "modconv: bad input shape " + x.shape_str());
    const int n = x.dim(0);
    TensorT<T> xin = up_ ? upsample2x(x) : x;
    const int h = xin.dim(2), w_sp = xin.dim(3);
    TensorT<T> styles = affine_.forward(w_row, ctx ? &ctx->affine_ctx : nullptr);

    TensorT<T> y({n, out_ch_, h, w_sp});
    TensorT<T> demod({n, out_ch_});
    const Eigen::Index kk = static_cast<Eigen::Index>(in_ch_) * 9;
    MatrixRM<T> wmod(out_ch_, kk), cols;
    for (int i = 0; i < n; ++i) {
      modulate(styles, i, wmod, &demod);
      im2col(xin, i, 3, 1, 1, h, w_sp, cols);
      MapRM<T> ym(y.data() + static_cast<size_t>(i) * out_ch_ * h * w_sp, out_ch_,
                  static_cast<Eigen::Index>(h) * w_sp);
      ym.noalias() = wmod * cols;
      for (int oc = 0; oc < out_ch_; ++oc) ym.row(oc).array() += b[oc];
    }
    if (ctx) {
      ctx->x_up = std::move(xin);
      ctx->styles = std::move(styles);
      ctx->demod = std::move(demod);
      ctx->upsampled = up_;
    }
    return y;
  }

  // Returns {gx, g_wrow}.
  std::pair<TensorT<T>, TensorT<T>> backward(const TensorT<T>& gy, const Ctx& ctx) {
    const int n = gy.dim(0);
    const int h = ctx.x_up.dim(2), w_sp = ctx.x_up.dim(3);
    const Eigen::Index kk = static_cast<Eigen::Index>(in_ch_) * 9;
    const Eigen::Index p = static_cast<Eigen::Index>(h) * w_sp;

    TensorT<T> gx_up(ctx.x_up.shape());
    TensorT<T> gstyles({n, in_ch_});
    MatrixRM<T> wmod(out_ch_, kk), gwmod(out_ch_, kk), ghat(out_ch_, kk), cols, gcols;
    ConstMapRM<T> wbase(w.data(), out_ch_, kk);
    MapRM<T> gwm(gw.data(), out_ch_, kk);

    for (int i = 0; i < n; ++i) {
      modulate(ctx.styles, i, wmod, nullptr);
      ConstMapRM<T> gym(gy.data() + static_cast<size_t>(i) * out_ch_ * p, out_ch_, p);
      for (int oc = 0; oc < out_ch_; ++oc) gb[oc] += gym.row(oc).sum();
      im2col(ctx.x_up, i, 3, 1, 1, h, w_sp, cols);
      gwmod.noalias() = gym * cols.transpose();
      gcols.noalias() = wmod.transpose() * gym;
      col2im_add(gcols, i, 3, 1, 1, h, w_sp, gx_up);

      // chain: w_tilde = w_hat * d_oc, d_oc = rsqrt(sum w_hat^2 + eps)
      for (int oc = 0; oc < out_ch_; ++oc) {
        const T d = ctx.demod.at2(i, oc);
        T s_dot = 0;
        for (Eigen::Index j = 0; j < kk; ++j) {
          const T what = wbase(oc, j) * ctx.styles.at2(i, static_cast<int>(j / 9));
          s_dot += gwmod(oc, j) * what;
        }
        for (Eigen::Index j = 0; j < kk; ++j) {
          const T what = wbase(oc, j) * ctx.styles.at2(i, static_cast<int>(j / 9));
          ghat(oc, j) = d * gwmod(oc, j) - d * d * d * what * s_dot;
        }
      }
      for (int oc = 0; oc < out_ch_; ++oc)
        for (Eigen::Index j = 0; j < kk; ++j) {
          const int ic = static_cast<int>(j / 9);
          gwm(oc, j) += ghat(oc, j) * ctx.styles.at2(i, ic);
          gstyles.at2(i, ic) += ghat(oc, j) * wbase(oc, j);
        }
    }
    TensorT<T> g_wrow = affine_.backward(gstyles, ctx.affine_ctx);
    TensorT<T> gx = ctx.upsampled ? upsample2x_backward(gx_up) : std::move(gx_up);
    return {std::move(gx), std::move(g_wrow)};
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".w", &w, &gw});
    out.push_back({prefix + ".b", &b, &gb});
    affine_.collect_params(prefix + ".affine", out);
  }

  bool upsamples() const { return up_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

  int in_ch_ = 0, out_ch_ = 0;
  bool up_ = false;
  TensorT<T> w, b, gw, gb;
  Linear<T> affine_;

 private:
  void modulate(const TensorT<T>& styles, int i, MatrixRM<T>& wmod, TensorT<T>* demod) const {
    const Eigen::Index kk = static_cast<Eigen::Index>(in_ch_) * 9;
    ConstMapRM<T> wbase(w.data(), out_ch_, kk);
    for (int oc = 0; oc < out_ch_; ++oc) {
      T sumsq = 0;
      for (Eigen::Index j = 0; j < kk; ++j) {
        const T v = wbase(oc, j) * styles.at2(i, static_cast<int>(j / 9));
        wmod(oc, j) = v;
        sumsq += v * v;
      }
      const T d = T(1) / std::sqrt(sumsq + T(1e-8));
      if (demod) demod->at2(i, oc) = d;
      for (Eigen::Index j = 0; j < kk; ++j) wmod(oc, j) *= d;
    }
  }
};

// ---------------------------------------------------------------------------
// Elementwise losses. Both return the scalar and write the gradient w.r.t.
// the first argument (mean reduction).

template <typename T>
double l1_loss(const TensorT<T>& y, const TensorT<T>& t, TensorT<T>* gy) {
  require(y.same_shape(t), "l1_loss: shape mismatch");
  const T inv = T(1) / static_cast<T>(y.numel());
  double loss = 0;
  if (gy) *gy = TensorT<T>(y.shape());
  for (int64_t i = 0; i < y.numel(); ++i) {
    const T d = y[i] - t[i];
    loss += std::abs(static_cast<double>(d));
    if (gy) (*gy)[i] = (d > T(0) ? inv : (d < T(0) ? -inv : T(0)));
  }
  return loss / static_cast<double>(y.numel());
}

template <typename T>
double mse_loss(const TensorT<T>& y, const TensorT<T>& t, TensorT<T>* gy) {
  require(y.same_shape(t), "mse_loss: shape mismatch");
  const T inv = T(2) / static_cast<T>(y.numel());
  double loss = 0;
  if (gy) *gy = TensorT<T>(y.shape());
  for (int64_t i = 0; i < y.numel(); ++i) {
    const T d = y[i] - t[i];
    loss += static_cast<double>(d) * static_cast<double>(d);
    if (gy) (*gy)[i] = inv * d;
  }
  return loss / static_cast<double>(y.numel());
}

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Batched FeatureMap helpers

template <typename T>
TensorT<T> stack_batch(const std::vector<TensorT<T>>& maps) {
  require(!maps.empty(), "stack_batch: empty input");
  const auto& s = maps[0].shape();
  require(s.size() == 3, "stack_batch: rank-3 inputs expected");
  TensorT<T> out({static_cast<int>(maps.size()), s[0], s[1], s[2]});
  const int64_t step = maps[0].numel();
  for (size_t i = 0; i < maps.size(); ++i) {
    require(maps[i].shape() == s, "stack_batch: inhomogeneous shapes");
    std::copy(maps[i].data(), maps[i].data() + step, out.data() + static_cast<int64_t>(i) * step);
  }
  return out;
}

template <typename T>
TensorT<T> batch_item(const TensorT<T>& batch, int i) {
  require(batch.rank() >= 2, "batch_item: rank too small");
  std::vector<int> s(batch.shape().begin() + 1, batch.shape().end());
  TensorT<T> out(s);
  const int64_t step = out.numel();
  std::copy(batch.data() + i * step, batch.data() + (i + 1) * step, out.data());
  return out;
}

}  // namespace panini::nn
