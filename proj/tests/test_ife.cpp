// Image-feature-extraction tests: pyramid shapes against the generator
// schedule, zero propagation, branch-conv identity behavior, latent codes,
// receptive-field locality, and backward plumbing.

#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "panini/ife.hpp"

using namespace panini;
using ife::DenseBlock;
using ife::Ife;
using ife::IfeConfig;

namespace {

IfeConfig toy_config() {
  IfeConfig cfg;
  cfg.input_res = 32;  // generator defaults: 5 blocks, base 4, fused 3
  return cfg;
}

void zero_biases(Ife& net) {
  std::vector<nn::ParamRef<float>> refs;
  net.collect_params("z", refs);
  for (auto& r : refs)
    if (r.name.size() >= 2 && r.name.substr(r.name.size() - 2) == ".b") r.value->zero();
}

// Spatial interval of cells that can be influenced by input interval [lo,hi]
// after a chain of (kernel, stride, pad) convolutions on a `size`-wide axis.
struct Interval {
  int lo = 0, hi = 0, size = 0;
};

Interval propagate(Interval in, const std::vector<std::array<int, 3>>& specs) {
  auto cdiv = [](int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); };
  Interval cur = in;
  for (auto [k, s, p] : specs) {
    const int out_size = (cur.size + 2 * p - k) / s + 1;
    int lo = cdiv(cur.lo - k + 1 + p, s);
    int hi = (cur.hi + p) / s;
    lo = std::max(lo, 0);
    hi = std::min(hi, out_size - 1);
    cur = {lo, hi, out_size};
  }
  return cur;
}

}  // namespace

TEST_CASE("pyramid config validation") {
  IfeConfig cfg = toy_config();
  CHECK(cfg.n_tilde() == 4);  // 4 -> 8 -> 16 -> 32
  cfg.validate();

  IfeConfig small = toy_config();
  small.input_res = 8;
  CHECK(small.n_tilde() == 2);
  CHECK_THROWS_AS(small.validate(), Error);  // n_fused 3 exceeds pyramid depth 2
  small.gen.n_fused = 2;
  small.validate();

  IfeConfig bad = toy_config();
  bad.input_res = 24;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.input_res = 2;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("pyramid shapes line up with the generator block schedule") {
  IfeConfig cfg = toy_config();
  Ife net(cfg);
  Rng rng(701);
  net.init(rng);

  Tensor x = oracle::random_tensor({2, 3, 32, 32}, rng, 0.5f);
  Ife::PyramidOut out = net.forward(x, nullptr);

  REQUIRE(static_cast<int>(out.tilde.size()) == 4);
  for (int level = 1; level <= 4; ++level) {
    const Tensor& t = out.tilde[static_cast<size_t>(level - 1)];
    CHECK(t.dim(0) == 2);
    CHECK(t.dim(1) == cfg.gen.block_channels(level));
    CHECK(t.dim(2) == cfg.gen.block_resolution(level));
    CHECK(t.dim(3) == cfg.gen.block_resolution(level));
  }
  // Shape alignment: every fused level's branch map matches the generator
  // block shape exactly.
  REQUIRE(static_cast<int>(out.branch.size()) == cfg.gen.n_fused);
  for (int level = 1; level <= cfg.gen.n_fused; ++level) {
    const Tensor& b = out.branch[static_cast<size_t>(level - 1)];
    CHECK(b.shape() == out.tilde[static_cast<size_t>(level - 1)].shape());
  }
  CHECK(out.w_plus.dim(0) == 2);
  CHECK(out.w_plus.dim(1) == cfg.gen.n_latents());
  CHECK(out.w_plus.dim(2) == cfg.gen.latent_dim);

  CHECK_THROWS_AS(net.forward(Tensor({2, 3, 16, 16}), nullptr), Error);
  CHECK_THROWS_AS(net.forward(Tensor({2, 1, 32, 32}), nullptr), Error);

  Ife::PyramidOut again = net.forward(x, nullptr);
  for (size_t l = 0; l < out.tilde.size(); ++l)
    for (int64_t i = 0; i < out.tilde[l].numel(); ++i)
      CHECK(out.tilde[l][i] == again.tilde[l][i]);
  for (int64_t i = 0; i < out.w_plus.numel(); ++i) CHECK(out.w_plus[i] == again.w_plus[i]);
}

TEST_CASE("zero input with zero biases produces an all-zero pyramid") {
  Ife net(toy_config());
  Rng rng(702);
  net.init(rng);
  zero_biases(net);

  Tensor x({1, 3, 32, 32});
  Ife::PyramidOut out = net.forward(x, nullptr);
  for (const Tensor& t : out.tilde)
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0f);
  for (const Tensor& b : out.branch)
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(b[i] == 0.0f);
  for (int64_t i = 0; i < out.w_plus.numel(); ++i) CHECK(out.w_plus[i] == 0.0f);
}

TEST_CASE("identity-initialized branch conv reproduces its input") {
  Ife net(toy_config());
  Rng rng(703);
  net.init(rng);

  for (int level = 1; level <= 3; ++level) {
    nn::Conv2d<float>& conv = net.branch_conv(level);
    conv.w.zero();
    conv.b.zero();
    for (int c = 0; c < conv.out_channels(); ++c) conv.w.at4(c, c, 1, 1) = 1.0f;
  }

  Tensor x = oracle::random_tensor({2, 3, 32, 32}, rng, 0.5f);
  Ife::PyramidOut out = net.forward(x, nullptr);
  for (int level = 1; level <= 3; ++level) {
    const Tensor& t = out.tilde[static_cast<size_t>(level - 1)];
    const Tensor& b = out.branch[static_cast<size_t>(level - 1)];
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(b[i] == t[i]);

    // The standalone entry point agrees with the fused forward.
    Tensor alone = net.branch_features(t, level);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(alone[i] == t[i]);
  }

  CHECK_THROWS_AS(net.branch_features(out.tilde[0], 0), Error);
  CHECK_THROWS_AS(net.branch_features(out.tilde[3], 4), Error);
  CHECK_THROWS_AS(net.branch_conv(0), Error);
  CHECK_THROWS_AS(net.branch_conv(4), Error);
}

TEST_CASE("latent-code encoder emits the configured w-plus shape") {
  IfeConfig cfg = toy_config();
  Ife net(cfg);
  Rng rng(704);
  net.init(rng);

  Tensor tilde1 = oracle::random_tensor({cfg.gen.block_channels(1), 4, 4}, rng, 0.5f);
  Tensor codes = net.encode_latents(tilde1);
  CHECK(codes.rank() == 2);
  CHECK(codes.dim(0) == 10);
  CHECK(codes.dim(1) == 128);

  Tensor batch = oracle::random_tensor({3, cfg.gen.block_channels(1), 4, 4}, rng, 0.5f);
  Tensor batch_codes = net.encode_latents(batch);
  CHECK(batch_codes.rank() == 3);
  CHECK(batch_codes.dim(0) == 3);
  CHECK(batch_codes.dim(1) == 10);
  CHECK(batch_codes.dim(2) == 128);

  CHECK_THROWS_AS(net.encode_latents(Tensor({64, 4, 4})), Error);
  CHECK_THROWS_AS(net.encode_latents(Tensor({cfg.gen.block_channels(1), 8, 8})), Error);

  // Distinct inputs produce distinct codes (non-degeneracy).
  Tensor other = tilde1;
  for (int64_t i = 0; i < other.numel(); ++i) other[i] += 0.3f;
  Tensor codes2 = net.encode_latents(other);
  double dist = 0;
  for (int64_t i = 0; i < codes.numel(); ++i) {
    const double d = static_cast<double>(codes[i]) - codes2[i];
    dist += d * d;
  }
  CHECK(std::sqrt(dist) > 0.0);
}

TEST_CASE("single-image wrappers agree with the batched forward") {
  Ife net(toy_config());
  Rng rng(705);
  net.init(rng);

  FeatureMap img = oracle::random_tensor({3, 32, 32}, rng, 0.5f);
  Tensor batch = img.reshaped({1, 3, 32, 32});
  Ife::PyramidOut out = net.forward(batch, nullptr);

  std::vector<Tensor> tilde = net.extract_pyramid(img);
  REQUIRE(tilde.size() == out.tilde.size());
  for (size_t l = 0; l < tilde.size(); ++l) {
    CHECK(tilde[l].rank() == 3);
    for (int64_t i = 0; i < tilde[l].numel(); ++i) CHECK(tilde[l][i] == out.tilde[l][i]);
  }
  for (int level = 1; level <= 3; ++level) {
    Tensor b = net.branch_features(tilde[static_cast<size_t>(level - 1)], level);
    const Tensor& want = out.branch[static_cast<size_t>(level - 1)];
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(b[i] == want[i]);
  }
  Tensor codes = net.encode_latents(tilde[0]);
  for (int64_t i = 0; i < codes.numel(); ++i) CHECK(codes[i] == out.w_plus[i]);
}

TEST_CASE("corner perturbations stay inside the receptive-field interval") {
  Ife net(toy_config());
  Rng rng(706);
  net.init(rng);
  auto specs = net.path_layer_specs();
  REQUIRE(specs.size() == 8);  // 5 dense-block convs + 3 stride-2 downs

  Tensor x = oracle::random_tensor({1, 3, 32, 32}, rng, 0.5f);
  Ife::PyramidOut base = net.forward(x, nullptr);

  for (int corner : {0, 31}) {
    Tensor xp = x;
    for (int c = 0; c < 3; ++c) xp.at4(0, c, corner, corner) += 0.5f;
    Ife::PyramidOut pert = net.forward(xp, nullptr);

    // Per level: drop the trailing stride-2 specs that lie below this level.
    for (int level = 1; level <= 4; ++level) {
      std::vector<std::array<int, 3>> chain(specs.begin(), specs.end() - (level - 1));
      Interval iv = propagate({corner, corner, 32}, chain);
      const Tensor& a = base.tilde[static_cast<size_t>(level - 1)];
      const Tensor& b = pert.tilde[static_cast<size_t>(level - 1)];
      CHECK(iv.size == a.dim(2));

      bool changed_inside = false;
      for (int c = 0; c < a.dim(1); ++c)
        for (int y = 0; y < a.dim(2); ++y)
          for (int xx = 0; xx < a.dim(3); ++xx) {
            const bool inside =
                y >= iv.lo && y <= iv.hi && xx >= iv.lo && xx <= iv.hi;
            if (!inside) {
              CHECK(a.at4(0, c, y, xx) == b.at4(0, c, y, xx));
            } else if (a.at4(0, c, y, xx) != b.at4(0, c, y, xx)) {
              changed_inside = true;
            }
          }
      CHECK(changed_inside);
      // The interval is a strict subset at all levels for a corner poke.
      CHECK(iv.hi - iv.lo + 1 < iv.size);
    }
  }
}

TEST_CASE("backward routes gradients to the right branch convs") {
  IfeConfig cfg = toy_config();
  Ife net(cfg);
  Rng rng(707);
  net.init(rng);
  std::vector<nn::ParamRef<float>> refs;
  net.collect_params("ife", refs);

  Tensor x = oracle::random_tensor({2, 3, 32, 32}, rng, 0.5f);
  Ife::Ctx ctx;
  Ife::PyramidOut out = net.forward(x, &ctx);

  auto grad_norm = [&](const std::string& needle) {
    double s = 0;
    for (auto& r : refs)
      if (r.name.find(needle) != std::string::npos)
        for (int64_t i = 0; i < r.grad->numel(); ++i)
          s += std::abs(static_cast<double>((*r.grad)[i]));
    return s;
  };

  // Case 1: gradient only on fused level 2.
  nn::zero_grads(refs);
  std::vector<Tensor> g_branch(3);
  g_branch[1] = oracle::random_tensor(out.branch[1].shape(), rng, 1.0f);
  Tensor g_w({2, cfg.gen.n_latents(), cfg.gen.latent_dim});
  Tensor gx = net.backward(g_branch, g_w, ctx);
  CHECK(gx.shape() == x.shape());
  CHECK(grad_norm(".branch2.") > 0.0);
  CHECK(grad_norm(".branch1.") == 0.0);
  CHECK(grad_norm(".branch3.") == 0.0);
  CHECK(grad_norm(".lce_fc.") == 0.0);
  CHECK(grad_norm(".dense.") > 0.0);  // flows up the pyramid into the trunk
  bool gx_nonzero = false;
  for (int64_t i = 0; i < gx.numel() && !gx_nonzero; ++i) gx_nonzero = gx[i] != 0.0f;
  CHECK(gx_nonzero);

  // Case 2: gradient only on the latent codes.
  Ife::PyramidOut out2 = net.forward(x, &ctx);
  nn::zero_grads(refs);
  std::vector<Tensor> none(3);
  Tensor g_w2 = oracle::random_tensor({2, cfg.gen.n_latents(), cfg.gen.latent_dim}, rng, 1.0f);
  net.backward(none, g_w2, ctx);
  CHECK(grad_norm(".lce_fc.") > 0.0);
  CHECK(grad_norm(".lce_conv.") > 0.0);
  CHECK(grad_norm(".branch1.") == 0.0);
  CHECK(grad_norm(".branch2.") == 0.0);
  CHECK(grad_norm(".branch3.") == 0.0);
  CHECK(grad_norm(".down") > 0.0);
  (void)out2;
}

TEST_CASE("branch weight gradients agree with finite differences") {
  IfeConfig cfg = toy_config();
  Ife net(cfg);
  Rng rng(708);
  net.init(rng);
  std::vector<nn::ParamRef<float>> refs;
  net.collect_params("ife", refs);

  Tensor x = oracle::random_tensor({1, 3, 32, 32}, rng, 0.5f);
  Tensor r = oracle::random_tensor({1, 128, 8, 8}, rng, 1.0f);  // level-2 shape

  auto objective = [&]() {
    Ife::PyramidOut o = net.forward(x, nullptr);
    double s = 0;
    for (int64_t i = 0; i < r.numel(); ++i)
      s += static_cast<double>(o.branch[1][i]) * r[i];
    return s;
  };

  Ife::Ctx ctx;
  Ife::PyramidOut out = net.forward(x, &ctx);
  (void)out;
  nn::zero_grads(refs);
  std::vector<Tensor> g_branch(3);
  g_branch[1] = r;
  net.backward(g_branch, Tensor({1, cfg.gen.n_latents(), cfg.gen.latent_dim}), ctx);

  nn::Conv2d<float>& conv = net.branch_conv(2);
  for (int64_t idx : {int64_t(0), int64_t(333), int64_t(2025)}) {
    const float h = 1e-2f;
    const float keep = conv.w[idx];
    conv.w[idx] = keep + h;
    const double fp = objective();
    conv.w[idx] = keep - h;
    const double fm = objective();
    conv.w[idx] = keep;
    const double fd = (fp - fm) / (2.0 * h);
    CHECK(oracle::rel_err(conv.gw[idx], fd) < 5e-3);
  }
}

TEST_CASE("dense block growth and transition widths") {
  DenseBlock block(8, 24);
  Rng rng(709);
  block.init(rng);

  auto specs = block.layer_specs();
  REQUIRE(specs.size() == 5);
  for (auto [k, s, p] : specs) {
    CHECK(k == 3);
    CHECK(s == 1);
    CHECK(p == 1);
  }

  std::vector<nn::ParamRef<float>> refs;
  block.collect_params("d", refs);
  // growth-16 concat widths: 8, 24, 40, 56 into the four layers; 72 into the
  // transition conv.
  auto weight_shape = [&](const std::string& name) -> std::vector<int> {
    for (auto& r : refs)
      if (r.name == name) return r.value->shape();
    FAIL("missing param ", name);
    return {};
  };
  CHECK(weight_shape("d.layer0.w") == std::vector<int>{16, 8, 3, 3});
  CHECK(weight_shape("d.layer1.w") == std::vector<int>{16, 24, 3, 3});
  CHECK(weight_shape("d.layer2.w") == std::vector<int>{16, 40, 3, 3});
  CHECK(weight_shape("d.layer3.w") == std::vector<int>{16, 56, 3, 3});
  CHECK(weight_shape("d.transition.w") == std::vector<int>{24, 72, 3, 3});

  Tensor x = oracle::random_tensor({1, 8, 6, 6}, rng, 0.5f);
  Tensor y = block.forward(x, nullptr);
  CHECK(y.dim(0) == 1);
  CHECK(y.dim(1) == 24);
  CHECK(y.dim(2) == 6);
  CHECK(y.dim(3) == 6);
  CHECK_THROWS_AS(block.forward(Tensor({1, 9, 6, 6}), nullptr), Error);
}
