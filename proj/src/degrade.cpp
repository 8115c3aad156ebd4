#include "panini/degrade.hpp"

#include <cmath>
#include <cstdio>

#include "panini/image_io.hpp"

namespace panini::degrade {

void DegradationParams::validate() const {
  require(blur_sigma > 0, "blur_sigma must be positive");
  require(down_rate >= 1.0, "down_rate must be >= 1");
  require(noise_std >= 0.0, "noise_std must be >= 0");
  require(jpeg_quality >= 1 && jpeg_quality <= 100, "jpeg_quality must be in [1,100]");
}

void ParamRanges::validate() const {
  auto chk = [](const Interval& iv, const char* name) {
    require(iv.lo <= iv.hi, std::string(name) + ": lower bound exceeds upper bound");
  };
  chk(blur_sigma, "blur_sigma range");
  chk(down_rate, "down_rate range");
  chk(noise_std, "noise_std range");
  chk(jpeg_quality, "jpeg_quality range");
  require(blur_sigma.lo > 0, "blur_sigma range must be positive");
  require(down_rate.lo >= 1.0, "down_rate range must start at >= 1");
  require(noise_std.lo >= 0.0, "noise_std range must be nonnegative");
  require(jpeg_quality.lo >= 1 && jpeg_quality.hi <= 100, "jpeg_quality range must be within [1,100]");
}

int kernel_size_for_sigma(double sigma) {
  require(sigma > 0, "sigma must be positive");
  int size = static_cast<int>(std::ceil(6.0 * sigma + 1.0));
  if (size % 2 == 0) size += 1;
  return size;
}

FeatureMap gaussian_kernel(double sigma, int size) {
  require(sigma > 0, "gaussian_kernel: sigma must be positive");
  require(size >= 1 && size % 2 == 1, "gaussian_kernel: size must be odd and positive");
  const int r = size / 2;
  // Accumulate in double and normalize before casting so the float kernel
  // still sums to 1 within 1e-7.
  std::vector<double> k(static_cast<size_t>(size) * size);
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      double v = std::exp(-(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy) /
                          (2.0 * sigma * sigma));
      k[static_cast<size_t>(dy + r) * size + (dx + r)] = v;
      total += v;
    }
  FeatureMap out({1, size, size});
  for (int i = 0; i < size * size; ++i)
    out[i] = static_cast<float>(k[static_cast<size_t>(i)] / total);
  return out;
}

FeatureMap convolve_kernel(const FeatureMap& img, const FeatureMap& kernel) {
  require(img.rank() == 3, "convolve_kernel: image must be rank-3");
  require(kernel.rank() == 3 && kernel.dim(0) == 1, "convolve_kernel: kernel must be {1,k,k}");
  require(kernel.dim(1) == kernel.dim(2) && kernel.dim(1) % 2 == 1,
          "convolve_kernel: kernel must be square and odd");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int ks = kernel.dim(1), r = ks / 2;
  FeatureMap out({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          int sy = y + dy;
          sy = sy < 0 ? 0 : (sy >= h ? h - 1 : sy);
          for (int dx = -r; dx <= r; ++dx) {
            int sx = x + dx;
            sx = sx < 0 ? 0 : (sx >= w ? w - 1 : sx);
            acc += static_cast<double>(kernel.at3(0, dy + r, dx + r)) * img.at3(ch, sy, sx);
          }
        }
        out.at3(ch, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

FeatureMap apply_degradation(const FeatureMap& hq, const DegradationParams& p) {
  p.validate();
  require(hq.rank() == 3, "apply_degradation: input must be rank-3 {C,H,W}");
  require(hq.dim(1) == hq.dim(2), "apply_degradation: input must have equal spatial dims");
  for (int64_t i = 0; i < hq.numel(); ++i)
    require(hq[i] >= 0.0f && hq[i] <= 255.0f, "apply_degradation: values must lie in [0,255]");

  const int size = hq.dim(1);

  FeatureMap x = convolve_kernel(hq, gaussian_kernel(p.blur_sigma, kernel_size_for_sigma(p.blur_sigma)));

  if (p.down_rate > 1.0) {
    int small = std::max(1, static_cast<int>(std::llround(size / p.down_rate)));
    x = resize_bilinear(resize_bilinear(x, small, small), size, size);
  }

  if (p.noise_std > 0.0) {
    Rng rng(p.seed);
    for (int64_t i = 0; i < x.numel(); ++i)
      x[i] += static_cast<float>(rng.normal(0.0, p.noise_std));
  }

  for (int64_t i = 0; i < x.numel(); ++i)
    x[i] = std::min(255.0f, std::max(0.0f, x[i]));

  return jpeg_roundtrip(x, p.jpeg_quality);
}

DegradationParams sample_params(const ParamRanges& ranges, uint64_t rng_seed) {
  ranges.validate();
  Rng rng(rng_seed);
  DegradationParams p;
  p.blur_sigma = rng.uniform(ranges.blur_sigma.lo, ranges.blur_sigma.hi);
  p.down_rate = rng.uniform(ranges.down_rate.lo, ranges.down_rate.hi);
  p.noise_std = rng.uniform(ranges.noise_std.lo, ranges.noise_std.hi);
  p.jpeg_quality = static_cast<int>(rng.uniform_int(static_cast<int64_t>(ranges.jpeg_quality.lo),
                                                    static_cast<int64_t>(ranges.jpeg_quality.hi)));
  p.seed = rng.next_u64();
  return p;
}

std::pair<FeatureMap, FeatureMap> make_positive_pair(const FeatureMap& hq_a,
                                                     const FeatureMap& hq_b,
                                                     const DegradationParams& p,
                                                     const WarnFn& warn) {
  require(hq_a.same_shape(hq_b), "make_positive_pair: shape mismatch between pair images");
  if (bit_equal(hq_a, hq_b)) {
    const char* msg = "make_positive_pair: query and key share identical content";
    if (warn)
      warn(msg);
    else
      std::fprintf(stderr, "warning: %s\n", msg);
  }
  DegradationParams p_key = p;
  p_key.seed = derive_seed(p.seed, 1);
  return {apply_degradation(hq_a, p), apply_degradation(hq_b, p_key)};
}

}  // namespace panini::degrade
