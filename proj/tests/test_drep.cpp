// Degradation-representation tests: encoder normalization, the contrastive
// objective and its gradients, the negative queue, and the momentum rule.

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "panini/dataset.hpp"
#include "panini/drep.hpp"

using namespace panini;
using drep::DreConfig;
using drep::DreEncoder;
using drep::EncoderPair;
using drep::NegativeQueue;

namespace {

// Basis-aligned unit rows so dot products are exact by construction.
template <typename T>
TensorT<T> one_hot_rows(const std::vector<int>& hot, int dim) {
  TensorT<T> t({static_cast<int>(hot.size()), dim});
  t.zero();
  for (size_t i = 0; i < hot.size(); ++i) t.at2(static_cast<int>(i), hot[i]) = T(1);
  return t;
}

template <typename T>
TensorT<T> random_unit_rows(int n, int dim, Rng& rng) {
  TensorT<T> t({n, dim});
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < dim; ++j) {
      t.at2(i, j) = static_cast<T>(rng.normal(0.0, 1.0));
      s += static_cast<double>(t.at2(i, j)) * t.at2(i, j);
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(s));
    for (int j = 0; j < dim; ++j) t.at2(i, j) *= inv;
  }
  return t;
}

std::vector<double> row_of(const TensorD& t, int i) {
  std::vector<double> v(static_cast<size_t>(t.dim(1)));
  for (int j = 0; j < t.dim(1); ++j) v[static_cast<size_t>(j)] = t.at2(i, j);
  return v;
}

std::vector<FeatureMap> tiny_pool(int n, int res, uint64_t seed) {
  std::vector<FeatureMap> pool;
  pool.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool.push_back(generate_face(seed + static_cast<uint64_t>(i), res, nullptr));
  return pool;
}

std::vector<float> snapshot(std::vector<nn::ParamRef<float>>& refs) {
  std::vector<float> out;
  for (auto& r : refs)
    out.insert(out.end(), r.value->data(), r.value->data() + r.value->numel());
  return out;
}

}  // namespace

TEST_CASE("encoder embeddings are unit-norm and deterministic") {
  DreConfig cfg;
  cfg.input_res = 16;
  DreEncoder enc(cfg);
  Rng rng(601);
  enc.init(rng);

  Tensor x = oracle::random_tensor({3, 3, 16, 16}, rng, 0.5f);
  Tensor v = enc.forward(x, nullptr);
  CHECK(v.dim(0) == 3);
  CHECK(v.dim(1) == 256);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 256; ++j) s += static_cast<double>(v.at2(i, j)) * v.at2(i, j);
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-5);
  }
  Tensor v2 = enc.forward(x, nullptr);
  for (int64_t i = 0; i < v.numel(); ++i) CHECK(v[i] == v2[i]);

  FeatureMap img = generate_face(9, 16, nullptr);
  Tensor e = enc.encode(img);
  CHECK(e.rank() == 1);
  CHECK(e.dim(0) == 256);
  double s = 0;
  for (int j = 0; j < 256; ++j) s += static_cast<double>(e[j]) * e[j];
  CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-5);

  CHECK_THROWS_AS(enc.encode(generate_face(9, 24, nullptr)), Error);
  CHECK_THROWS_AS(enc.forward(Tensor({1, 3, 8, 8}), nullptr), Error);
}

TEST_CASE("info_nce: equal positive and negative similarity gives log 2") {
  // q is orthogonal to both k0 and the single negative, so both logits tie.
  TensorD q = one_hot_rows<double>({0}, 8);
  TensorD k0 = one_hot_rows<double>({1}, 8);
  TensorD negs = one_hot_rows<double>({2}, 8);
  auto r = drep::info_nce<double>(q, k0, negs, 0.07, true);
  CHECK(std::abs(r.loss - std::log(2.0)) < 1e-6);

  auto rf = drep::info_nce<float>(one_hot_rows<float>({0}, 8), one_hot_rows<float>({1}, 8),
                                  one_hot_rows<float>({2}, 8), 0.07, true);
  CHECK(std::abs(rf.loss - std::log(2.0)) < 1e-6);
}

TEST_CASE("info_nce: perfect positive with orthogonal negatives, closed form") {
  const double tau = 0.07;
  const int n = 8;
  TensorD q = one_hot_rows<double>({0}, 16);
  TensorD k0 = one_hot_rows<double>({0}, 16);  // q == k0
  std::vector<int> hots;
  for (int i = 0; i < n; ++i) hots.push_back(1 + i);
  TensorD negs = one_hot_rows<double>(hots, 16);

  const double want = std::log(std::exp(1.0 / tau) + n) - 1.0 / tau;
  auto r = drep::info_nce<double>(q, k0, negs, tau, true);
  CHECK(std::abs(r.loss - want) < 1e-12);

  auto rf = drep::info_nce<float>(one_hot_rows<float>({0}, 16), one_hot_rows<float>({0}, 16),
                                  one_hot_rows<float>(hots, 16), tau, true);
  CHECK(std::abs(rf.loss - want) < 1e-5);
}

TEST_CASE("info_nce matches the scalar brute-force oracle on random batches") {
  Rng rng(602);
  for (int trial = 0; trial < 110; ++trial) {
    const int b = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 7));
    const int d = 4 + static_cast<int>(rng.uniform_int(0, 12));
    const double tau = 0.2;
    TensorD q = random_unit_rows<double>(b, d, rng);
    TensorD k0 = random_unit_rows<double>(b, d, rng);
    TensorD negs = random_unit_rows<double>(n, d, rng);

    std::vector<std::vector<double>> neg_rows;
    for (int i = 0; i < n; ++i) neg_rows.push_back(row_of(negs, i));

    for (bool include_pos : {true, false}) {
      double want = 0;
      for (int i = 0; i < b; ++i)
        want += oracle::info_nce_single(row_of(q, i), row_of(k0, i), neg_rows, tau, include_pos);
      auto r = drep::info_nce<double>(q, k0, negs, tau, include_pos);
      CHECK(std::abs(r.loss - want) < 1e-6);
      if (include_pos) CHECK(r.loss > 0.0);  // denominator strictly exceeds the numerator
    }
  }
}

TEST_CASE("info_nce rejects malformed inputs") {
  TensorD q = one_hot_rows<double>({0}, 8);
  TensorD k0 = one_hot_rows<double>({1}, 8);
  TensorD negs = one_hot_rows<double>({2}, 8);

  CHECK_THROWS_AS(drep::info_nce<double>(q, k0, negs, 0.0, true), Error);
  CHECK_THROWS_AS(drep::info_nce<double>(q, k0, negs, -0.1, true), Error);
  CHECK_THROWS_AS(drep::info_nce<double>(q, k0, TensorD({0, 8}), 0.07, true), Error);
  CHECK_THROWS_AS(drep::info_nce<double>(q, k0, one_hot_rows<double>({0}, 4), 0.07, true), Error);

  TensorD bad = q;
  bad.at2(0, 0) = 1.01;  // norm off by more than the 1e-3 gate
  try {
    drep::info_nce<double>(bad, k0, negs, 0.07, true);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(std::string(e.error_class()) == "invalid-argument");
  }
  CHECK_THROWS_AS(drep::info_nce<double>(q, bad, negs, 0.07, true), Error);
}

TEST_CASE("info_nce gradients match finite differences") {
  Rng rng(603);
  const int b = 2, n = 4, d = 8;
  const double tau = 0.15;
  for (bool include_pos : {true, false}) {
    TensorD q = random_unit_rows<double>(b, d, rng);
    TensorD k0 = random_unit_rows<double>(b, d, rng);
    TensorD negs = random_unit_rows<double>(n, d, rng);

    auto r = drep::info_nce<double>(q, k0, negs, tau, include_pos);
    auto loss_fn = [&]() { return drep::info_nce<double>(q, k0, negs, tau, include_pos).loss; };
    for (int64_t i = 0; i < q.numel(); ++i) {
      const double fd = oracle::central_diff(q, i, loss_fn);
      CHECK(oracle::rel_err(r.grad_q[i], fd) < 1e-4);
      CHECK(oracle::rel_err(r.grad_q[i], fd) < 1e-7);
    }
    for (int64_t i = 0; i < k0.numel(); ++i) {
      const double fd = oracle::central_diff(k0, i, loss_fn);
      CHECK(oracle::rel_err(r.grad_k0[i], fd) < 1e-4);
      CHECK(oracle::rel_err(r.grad_k0[i], fd) < 1e-7);
    }
  }
}

TEST_CASE("negative queue: prefill, FIFO eviction, and ordering") {
  NegativeQueue queue(8, 4);
  CHECK(queue.size() == 0);
  CHECK(queue.capacity() == 8);
  CHECK(queue.dim() == 4);

  queue.prefill_random(42);
  CHECK(queue.size() == 8);
  Tensor pre = queue.entries();
  for (int i = 0; i < 8; ++i) {
    double s = 0;
    for (int j = 0; j < 4; ++j) s += static_cast<double>(pre.at2(i, j)) * pre.at2(i, j);
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-5);
  }
  NegativeQueue twin(8, 4);
  twin.prefill_random(42);
  Tensor pre_twin = twin.entries();
  for (int64_t i = 0; i < pre.numel(); ++i) CHECK(pre[i] == pre_twin[i]);
  NegativeQueue other(8, 4);
  other.prefill_random(43);
  bool differs = false;
  Tensor pre_other = other.entries();
  for (int64_t i = 0; i < pre.numel() && !differs; ++i) differs = pre[i] != pre_other[i];
  CHECK(differs);

  // Tagged batches: batch b carries rows (b, row) in a recoverable encoding.
  auto tagged = [](int b) {
    Tensor t({2, 4});
    t.zero();
    for (int r = 0; r < 2; ++r) {
      t.at2(r, 0) = static_cast<float>(b) / 8.0f;
      t.at2(r, 1) = static_cast<float>(r);
      const double norm = std::sqrt(static_cast<double>(t.at2(r, 0)) * t.at2(r, 0) +
                                    static_cast<double>(t.at2(r, 1)) * t.at2(r, 1) + 1.0);
      t.at2(r, 2) = 1.0f;
      for (int j = 0; j < 4; ++j) t.at2(r, j) = static_cast<float>(t.at2(r, j) / norm);
    }
    return t;
  };
  for (int b = 0; b < 7; ++b) queue.enqueue(tagged(b));
  CHECK(queue.size() == 8);
  CHECK(queue.write_cursor() == 8 + 7 * 2);
  Tensor got = queue.entries();
  // Last four batches 3,4,5,6 in order, oldest first.
  for (int slot = 0; slot < 4; ++slot) {
    Tensor want = tagged(3 + slot);
    for (int r = 0; r < 2; ++r)
      for (int j = 0; j < 4; ++j) CHECK(got.at2(slot * 2 + r, j) == want.at2(r, j));
  }

  CHECK_THROWS_AS(queue.enqueue(Tensor({2, 5})), Error);
  CHECK_THROWS_AS(queue.enqueue(Tensor({2, 4, 1})), Error);
}

TEST_CASE("negative queue grows until capacity without prefill") {
  NegativeQueue queue(6, 3);
  Rng rng(604);
  for (int t = 1; t <= 5; ++t) {
    queue.enqueue(random_unit_rows<float>(2, 3, rng));
    CHECK(queue.size() == std::min(6, 2 * t));
  }
  CHECK(queue.write_cursor() == 10);
}

TEST_CASE("negative queue raw storage round trip preserves behavior") {
  NegativeQueue queue(8, 4);
  queue.prefill_random(7);
  Rng rng(605);
  for (int t = 0; t < 5; ++t) queue.enqueue(random_unit_rows<float>(2, 4, rng));

  Tensor storage = queue.raw_storage();
  NegativeQueue restored(8, 4);
  restored.restore(storage, queue.write_cursor(), queue.size());
  CHECK(restored.size() == queue.size());
  CHECK(restored.write_cursor() == queue.write_cursor());
  Tensor a = queue.entries(), b = restored.entries();
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

  Tensor extra = random_unit_rows<float>(2, 4, rng);
  queue.enqueue(extra);
  restored.enqueue(extra);
  a = queue.entries();
  b = restored.entries();
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("momentum update follows the convex rule exactly") {
  DreConfig cfg;
  cfg.input_res = 16;
  Rng rng(606);

  // m=0: key becomes the query.
  EncoderPair p0(cfg, 0.0, rng);
  std::vector<nn::ParamRef<float>> q0, k0;
  p0.query.collect_params("q", q0);
  p0.key.collect_params("k", k0);
  for (auto& r : k0) r.value->randn(rng, 0.1);  // desynchronize first
  p0.momentum_update();
  auto qs = snapshot(q0), ks = snapshot(k0);
  for (size_t i = 0; i < qs.size(); ++i) CHECK(ks[i] == qs[i]);

  // m=1: key frozen. The constructor caps m below 1, so set the limit case
  // through the public field after building a valid pair.
  CHECK_THROWS_AS(EncoderPair(cfg, 1.0, rng), Error);
  CHECK_THROWS_AS(EncoderPair(cfg, -0.1, rng), Error);
  EncoderPair p1(cfg, 0.5, rng);
  p1.momentum = 1.0;
  std::vector<nn::ParamRef<float>> q1, k1;
  p1.query.collect_params("q", q1);
  p1.key.collect_params("k", k1);
  for (auto& r : k1) r.value->randn(rng, 0.1);
  auto before = snapshot(k1);
  p1.momentum_update();
  auto after = snapshot(k1);
  for (size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);

  // m=0.999: elementwise formula, and the query side is untouched.
  EncoderPair pm(cfg, 0.999, rng);
  std::vector<nn::ParamRef<float>> qm, km;
  pm.query.collect_params("q", qm);
  pm.key.collect_params("k", km);
  for (auto& r : km) r.value->randn(rng, 0.1);
  auto key_before = snapshot(km);
  auto query_before = snapshot(qm);
  pm.momentum_update();
  auto key_after = snapshot(km);
  auto query_after = snapshot(qm);
  for (size_t i = 0; i < key_before.size(); ++i) {
    const double want = 0.999 * static_cast<double>(key_before[i]) + 0.001 * query_before[i];
    CHECK(std::abs(static_cast<double>(key_after[i]) - want) < 1e-7);
    CHECK(query_after[i] == query_before[i]);
  }
}

TEST_CASE("momentum update rejects mismatched parameter lists") {
  nn::Linear<float> a(4, 4), b(4, 5);
  Rng rng(607);
  a.init(rng, 1.0);
  b.init(rng, 1.0);
  std::vector<nn::ParamRef<float>> la, lb, lc;
  a.collect_params("p", la);
  b.collect_params("p", lb);
  try {
    drep::momentum_update_params(la, lb, 0.9);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(std::string(e.error_class()) == "invalid-state");
  }
  a.collect_params("p", lc);
  lc.pop_back();
  CHECK_THROWS_AS(drep::momentum_update_params(lc, la, 0.9), Error);
}

TEST_CASE("pretraining with zero learning rate leaves the query encoder untouched") {
  DreConfig dcfg;
  dcfg.input_res = 16;
  Rng rng(608);
  EncoderPair pair(dcfg, 0.999, rng);
  NegativeQueue queue(64, 256);
  queue.prefill_random(11);

  Config cfg;
  cfg.set("udrl_steps", "1");
  cfg.set("udrl_batch", "2");
  cfg.set("udrl_lr", "0");
  cfg.set("udrl_min_lr", "0");
  cfg.set("seed", "5");

  std::vector<nn::ParamRef<float>> qp;
  pair.query.collect_params("q", qp);
  auto before = snapshot(qp);

  auto pool = tiny_pool(3, 24, 77);
  auto result = drep::pretrain_dre(pool, cfg, pair, queue, "");
  REQUIRE(result.loss_curve.size() == 1);
  CHECK(std::isfinite(result.loss_curve[0].second));
  CHECK(result.loss_curve[0].second > 0.0);

  auto after = snapshot(qp);
  for (size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);

  CHECK_THROWS_AS(drep::pretrain_dre({}, cfg, pair, queue, ""), Error);
  CHECK_THROWS_AS(drep::pretrain_dre(tiny_pool(1, 24, 3), cfg, pair, queue, ""), Error);
}

TEST_CASE("a training step moves the key encoder only by the momentum rule") {
  DreConfig dcfg;
  dcfg.input_res = 16;
  Rng rng(609);
  EncoderPair pair(dcfg, 0.99, rng);
  NegativeQueue queue(32, 256);
  queue.prefill_random(3);

  std::vector<nn::ParamRef<float>> qp, kp;
  pair.query.collect_params("q", qp);
  pair.key.collect_params("k", kp);
  auto key_before = snapshot(kp);

  Config cfg;
  cfg.set("udrl_steps", "1");
  cfg.set("udrl_batch", "2");
  cfg.set("udrl_lr", "0.01");
  cfg.set("seed", "21");
  auto pool = tiny_pool(3, 24, 55);
  const int queue_size_before = queue.size();
  const int64_t cursor_before = queue.write_cursor();
  drep::pretrain_dre(pool, cfg, pair, queue, "");

  auto key_after = snapshot(kp);
  auto query_after = snapshot(qp);  // post-step query, which the rule mixes in
  double max_err = 0;
  for (size_t i = 0; i < key_before.size(); ++i) {
    const double want = 0.99 * static_cast<double>(key_before[i]) + 0.01 * query_after[i];
    max_err = std::max(max_err, std::abs(static_cast<double>(key_after[i]) - want));
  }
  CHECK(max_err < 1e-6);
  CHECK(queue.write_cursor() == cursor_before + 2);  // the key batch was enqueued
  CHECK(queue.size() == queue_size_before);          // already full, so size is stable
}

TEST_CASE("pretraining is reproducible and writes a loss log") {
  DreConfig dcfg;
  dcfg.input_res = 16;

  Config cfg;
  cfg.set("udrl_steps", "2");
  cfg.set("udrl_batch", "2");
  cfg.set("udrl_lr", "0.005");
  cfg.set("seed", "99");

  auto pool = tiny_pool(3, 24, 13);
  const std::string log_path =
      (std::filesystem::temp_directory_path() / "panini_drep_log.csv").string();

  auto run = [&](std::vector<float>* params_out) {
    Rng rng(610);
    EncoderPair pair(dcfg, 0.999, rng);
    NegativeQueue queue(32, 256);
    queue.prefill_random(8);
    auto res = drep::pretrain_dre(pool, cfg, pair, queue, log_path);
    if (params_out) {
      std::vector<nn::ParamRef<float>> qp;
      pair.query.collect_params("q", qp);
      *params_out = snapshot(qp);
    }
    return res;
  };

  std::vector<float> params_a, params_b;
  auto ra = run(&params_a);
  auto rb = run(&params_b);
  REQUIRE(ra.loss_curve.size() == 2);
  for (size_t i = 0; i < ra.loss_curve.size(); ++i) {
    CHECK(ra.loss_curve[i].first == rb.loss_curve[i].first);
    CHECK(ra.loss_curve[i].second == rb.loss_curve[i].second);
  }
  CHECK(params_a == params_b);

  std::ifstream log(log_path);
  REQUIRE(log.good());
  std::string line;
  std::getline(log, line);
  CHECK(line == "step,loss");
  int rows = 0;
  while (std::getline(log, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(log_path);
}
