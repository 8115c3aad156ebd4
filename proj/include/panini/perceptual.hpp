#pragma once

#include <cmath>
#include <vector>

#include "panini/nn.hpp"
#include "panini/tensor.hpp"

namespace panini {

// Fixed random 5-layer conv feature stack used as the perceptual metric.
// Parameters are generated from the seed at construction and never updated;
// the loss is the sum over layers of the mean squared feature distance.
// Templated so gradient checks can run the identical computation in double.
inline constexpr uint64_t kPerceptualSeed = 0x9E3779B97F4A7C15ull;

template <typename T>
class PerceptualT {
 public:
  explicit PerceptualT(uint64_t seed = kPerceptualSeed) {
    const int chans[6] = {3, 8, 16, 32, 64, 64};
    const int strides[5] = {1, 2, 2, 2, 1};
    Rng rng(seed);
    for (int i = 0; i < 5; ++i) {
      convs_.emplace_back(chans[i], chans[i + 1], 3, strides[i], 1);
      convs_.back().init(rng, std::sqrt(2.0));
    }
  }

  // y, hq: {N,C,H,W} in net range. Writes d(loss)/dy when gy is non-null.
  // Non-const only because the backward sweep scribbles on internal grad
  // buffers; extractor parameters are never modified.
  double loss(const TensorT<T>& y, const TensorT<T>& hq, TensorT<T>* gy) {
    require(y.same_shape(hq), "perceptual_loss: shape mismatch");
    struct Stage {
      typename nn::Conv2d<T>::Ctx ctx;
      TensorT<T> act;
    };
    std::vector<Stage> y_stages(convs_.size());
    std::vector<TensorT<T>> h_feats;

    TensorT<T> hy = y, hh = hq;
    double total = 0;
    std::vector<TensorT<T>> stage_grads(convs_.size());
    for (size_t i = 0; i < convs_.size(); ++i) {
      hy = convs_[i].forward(hy, gy ? &y_stages[i].ctx : nullptr);
      hy = nn::leaky_relu(hy, T(0.2));
      y_stages[i].act = hy;
      hh = convs_[i].forward(hh, nullptr);
      hh = nn::leaky_relu(hh, T(0.2));
      total += nn::mse_loss(hy, hh, gy ? &stage_grads[i] : nullptr);
    }
    if (gy) {
      // chain every stage's MSE grad back to the input in one reverse sweep
      TensorT<T> acc;
      for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
        TensorT<T> g = stage_grads[static_cast<size_t>(i)];
        if (acc.numel() > 0) g.add_scaled(acc, T(1));
        g = nn::leaky_relu_backward(g, y_stages[static_cast<size_t>(i)].act, T(0.2));
        acc = convs_[static_cast<size_t>(i)].backward(g, y_stages[static_cast<size_t>(i)].ctx);
      }
      *gy = std::move(acc);
      for (auto& c : convs_) {
        c.gw.zero();
        c.gb.zero();
      }
    }
    return total;
  }

 private:
  std::vector<nn::Conv2d<T>> convs_;
};

using Perceptual = PerceptualT<float>;

}  // namespace panini
