#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "panini/nn.hpp"
#include "panini/tensor.hpp"

namespace panini::nn {

// Cosine annealing from base_lr down to min_lr over total_steps.
struct CosineSchedule {
  double base_lr = 2e-3;
  double min_lr = 0.0;
  int total_steps = 1;

  double lr_at(int step) const {
    if (total_steps <= 0) return base_lr;
    const double t = std::min(std::max(step, 0), total_steps) / static_cast<double>(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(M_PI * t));
  }
};

template <typename T>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update to every param in `refs` using its accumulated grad.
  // State is keyed by param name so the ref list may be rebuilt between calls.
  void step(std::vector<ParamRef<T>>& refs, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& r : refs) {
      State& st = state_[r.name];
      if (st.m.numel() == 0) {
        st.m = TensorT<T>(r.value->shape());
        st.v = TensorT<T>(r.value->shape());
        st.m.zero();
        st.v.zero();
      }
      TensorT<T>& p = *r.value;
      const TensorT<T>& g = *r.grad;
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        st.m[i] = static_cast<T>(beta1_ * st.m[i] + (1.0 - beta1_) * gi);
        st.v[i] = static_cast<T>(beta2_ * st.v[i] + (1.0 - beta2_) * gi * gi);
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        p[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  int64_t step_count() const { return t_; }

 private:
  struct State {
    TensorT<T> m, v;
  };
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, State> state_;
};

}  // namespace panini::nn
