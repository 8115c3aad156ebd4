#pragma once

#include "panini/tensor.hpp"

namespace panini {

struct PsnrResult {
  double db = 0.0;
  bool capped = false;  // true when MSE was 0 (or PSNR exceeded the cap)
};

inline constexpr double kPsnrCapDb = 99.0;

// Mean squared error over all elements; inputs in [0,255] convention.
double mse(const FeatureMap& a, const FeatureMap& b);

// 10*log10(255^2 / MSE); identical inputs report the 99 dB sentinel with
// capped=true. Shape mismatch raises invalid-argument.
PsnrResult psnr(const FeatureMap& a, const FeatureMap& b);

}  // namespace panini
