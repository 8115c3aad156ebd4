#pragma once

#include <cstdint>
#include <functional>
#include <utility>

#include "panini/tensor.hpp"

namespace panini::degrade {

// Parameters of the synthetic degradation pipeline
//   blur -> bilinear down by rate -> bilinear up to original size
//        -> additive Gaussian noise -> clamp [0,255] -> JPEG round trip.
// Two applications with identical fields (seed included) are bit-identical.
struct DegradationParams {
  double blur_sigma = 1.0;   // Gaussian blur std, pixels
  double down_rate = 1.0;    // >= 1; 1 means no resampling
  double noise_std = 0.0;    // additive noise std on the [0,255] scale
  int jpeg_quality = 100;    // [1,100]
  uint64_t seed = 0;         // drives the noise draw only

  void validate() const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Sampling intervals for each degradation parameter. Defaults are the toy
// 64-px configuration; all four are configurable because the full-scale
// ranges do not transfer to this resolution.
struct ParamRanges {
  Interval blur_sigma{0.2, 6.0};
  Interval down_rate{1.0, 8.0};
  Interval noise_std{0.0, 25.0};
  Interval jpeg_quality{5, 50};  // integer endpoints, sampled inclusively

  void validate() const;
};

// Smallest odd kernel size covering +-3 sigma.
int kernel_size_for_sigma(double sigma);

// Isotropic 2-D Gaussian sampled at integer offsets from the center,
// normalized to unit sum. Returned as a {1,size,size} FeatureMap.
FeatureMap gaussian_kernel(double sigma, int size);

// Convolve each channel with a {1,k,k} kernel, clamp-to-edge padding.
FeatureMap convolve_kernel(const FeatureMap& img, const FeatureMap& kernel);

// Apply the full degradation pipeline. Input must be square with values in
// [0,255]; output has the same shape.
FeatureMap apply_degradation(const FeatureMap& hq, const DegradationParams& p);

// Draw each parameter independently and uniformly from its interval.
// jpeg_quality is drawn as an integer, inclusive on both ends.
DegradationParams sample_params(const ParamRanges& ranges, uint64_t rng_seed);

using WarnFn = std::function<void(const std::string&)>;

// Degrade two different HQ images with the same degradation fields; the key
// side uses an independent noise seed derived from p.seed. Identical content
// is allowed but reported through the warning channel.
std::pair<FeatureMap, FeatureMap> make_positive_pair(const FeatureMap& hq_a,
                                                     const FeatureMap& hq_b,
                                                     const DegradationParams& p,
                                                     const WarnFn& warn = {});

}  // namespace panini::degrade

// The degradation vocabulary is used across every downstream module; lift it
// into the parent namespace.
namespace panini {
using degrade::apply_degradation;
using degrade::DegradationParams;
using degrade::gaussian_kernel;
using degrade::kernel_size_for_sigma;
using degrade::make_positive_pair;
using degrade::ParamRanges;
using degrade::sample_params;
}  // namespace panini
