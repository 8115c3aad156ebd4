#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panini/tensor.hpp"

namespace panini {

// Images are FeatureMaps {C,H,W} with C in {1,3}, float values on the
// 8-bit [0,255] scale. Codec boundaries round to uint8 with nearest rounding.

// Baseline JPEG with 4:4:4 sampling (no chroma subsampling) so that q=100 is
// a near-lossless round trip. Deterministic for fixed input and quality.
std::vector<uint8_t> jpeg_encode(const FeatureMap& img, int quality);
FeatureMap jpeg_decode(const std::vector<uint8_t>& bytes);
FeatureMap jpeg_roundtrip(const FeatureMap& img, int quality);

void write_png(const std::string& path, const FeatureMap& img);
FeatureMap read_png(const std::string& path);
void write_jpeg(const std::string& path, const FeatureMap& img, int quality);
FeatureMap read_image(const std::string& path);  // by extension: .png/.jpg/.jpeg

// Bilinear resampling with the pixel-center convention
// src_x = (dst_x + 0.5) * (W_in / W_out) - 0.5, edges clamped.
// Used both for the degradation down/up stage and for LQ formation.
FeatureMap resize_bilinear(const FeatureMap& img, int out_h, int out_w);

// [0,255] <-> [-1,1] conversions between image space and network space.
Tensor to_net_range(const Tensor& img255);
Tensor to_image_range(const Tensor& net);  // clamps to [0,255]

uint8_t quantize_u8(float v);

}  // namespace panini
