#include "panini/metrics.hpp"

#include <cmath>

#include "panini/common.hpp"

namespace panini {

double mse(const FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b))
    throw InvalidArgument("psnr/mse: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  require(a.numel() > 0, "mse: empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

PsnrResult psnr(const FeatureMap& a, const FeatureMap& b) {
  const double m = mse(a, b);
  PsnrResult r;
  if (m <= 0.0) {
    r.db = kPsnrCapDb;
    r.capped = true;
    return r;
  }
  r.db = 10.0 * std::log10(255.0 * 255.0 / m);
  if (r.db > kPsnrCapDb) {
    r.db = kPsnrCapDb;
    r.capped = true;
  }
  return r;
}

}  // namespace panini
