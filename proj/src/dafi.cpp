#include "panini/dafi.hpp"

#include <cstdio>

#include "panini/common.hpp"

namespace panini::dafi {

Source parse_source(const std::string& tag) {
  if (tag == "gpb") return Source::gpb;
  if (tag == "ife") return Source::ife;
  throw InvalidArgument("unknown dissection source '" + tag + "' (want gpb or ife)");
}

Tensor CatConvHead::forward(const Tensor& f_gpb, const Tensor& f_ife, Ctx* ctx) const {
  require(f_gpb.same_shape(f_ife),
          "cat_conv_fuse: shape mismatch " + f_gpb.shape_str() + " vs " + f_ife.shape_str());
  require(f_gpb.rank() == 4, "cat_conv_fuse: want {N,C,H,W}");
  require(2 * f_gpb.dim(1) == conv_.in_channels(), "cat_conv_fuse: channel count mismatch");
  const int n = f_gpb.dim(0), c = f_gpb.dim(1), h = f_gpb.dim(2), w = f_gpb.dim(3);
  Tensor cat({n, 2 * c, h, w});
  const int64_t plane = static_cast<int64_t>(c) * h * w;
  for (int i = 0; i < n; ++i) {
    std::copy(f_gpb.data() + i * plane, f_gpb.data() + (i + 1) * plane,
              cat.data() + static_cast<int64_t>(i) * 2 * plane);
    std::copy(f_ife.data() + i * plane, f_ife.data() + (i + 1) * plane,
              cat.data() + static_cast<int64_t>(i) * 2 * plane + plane);
  }
  return conv_.forward(cat, ctx ? &ctx->conv_ctx : nullptr);
}

std::pair<Tensor, Tensor> CatConvHead::backward(const Tensor& gy, const Ctx& ctx) {
  Tensor gcat = conv_.backward(gy, ctx.conv_ctx);
  const int n = gcat.dim(0), c2 = gcat.dim(1), h = gcat.dim(2), w = gcat.dim(3);
  const int c = c2 / 2;
  Tensor g_gpb({n, c, h, w}), g_ife({n, c, h, w});
  const int64_t plane = static_cast<int64_t>(c) * h * w;
  for (int i = 0; i < n; ++i) {
    std::copy(gcat.data() + static_cast<int64_t>(i) * 2 * plane,
              gcat.data() + static_cast<int64_t>(i) * 2 * plane + plane, g_gpb.data() + i * plane);
    std::copy(gcat.data() + static_cast<int64_t>(i) * 2 * plane + plane,
              gcat.data() + static_cast<int64_t>(i + 1) * 2 * plane, g_ife.data() + i * plane);
  }
  return {std::move(g_gpb), std::move(g_ife)};
}

int64_t CatConvHead::param_count() const {
  return cat_conv_head_param_count(conv_.out_channels());
}

int64_t dafi_head_param_count(int channels, int hidden, int embed_dim) {
  const int64_t fc1 = static_cast<int64_t>(embed_dim) * hidden + hidden;
  const int64_t fc2 = static_cast<int64_t>(hidden) * 2 * channels + 2 * channels;
  return fc1 + fc2;
}

int64_t cat_conv_head_param_count(int channels) {
  return static_cast<int64_t>(9) * (2 * channels) * channels + channels;
}

std::string mask_to_csv(const Mask& mask) {
  std::string out = "channel,weight\n";
  char row[64];
  for (int c = 0; c < mask.channels(); ++c) {
    std::snprintf(row, sizeof(row), "%d,%.9g\n", c,
                  static_cast<double>(mask.weights[static_cast<size_t>(c)]));
    out += row;
  }
  return out;
}

}  // namespace panini::dafi
