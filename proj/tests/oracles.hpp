#pragma once

// Hand-rolled scalar reference implementations used to cross-check the
// library's vectorized code, plus small helpers for property-style tests.
// Everything here is deliberately naive: plain loops, double precision,
// no shared code with the implementations under test.

#include <cmath>
#include <cstdint>
#include <vector>

#include "panini/common.hpp"
#include "panini/tensor.hpp"

namespace oracle {

using panini::Rng;
using panini::Tensor;
using panini::TensorD;

// ---- scalar reference ops ----------------------------------------------

// PSNR in dB from two same-length value arrays (peak 255).
inline double psnr_db(const std::vector<double>& a, const std::vector<double>& b) {
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

// Pairwise softmax over one (a,b) logit pair.
inline std::pair<double, double> softmax2(double a, double b) {
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

// InfoNCE for one query against positive k0 and negatives, sum form.
// include_pos: positive term participates in the denominator.
inline double info_nce_single(const std::vector<double>& q, const std::vector<double>& k0,
                              const std::vector<std::vector<double>>& negs, double tau,
                              bool include_pos) {
  auto dot = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
  };
  const double l_pos = dot(q, k0) / tau;
  std::vector<double> logits;
  if (include_pos) logits.push_back(l_pos);
  for (const auto& n : negs) logits.push_back(dot(q, n) / tau);
  double m = logits[0];
  for (double l : logits) m = std::max(m, l);
  double z = 0;
  for (double l : logits) z += std::exp(l - m);
  return (m + std::log(z)) - l_pos;
}

// Unnormalized isotropic Gaussian at integer offset (dy, dx).
inline double gauss2(double sigma, int dy, int dx) {
  return std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
}

// ---- tensor helpers -----------------------------------------------------

inline Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  t.randn(rng, scale);
  return t;
}

inline TensorD random_tensor_d(const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
  TensorD t(shape);
  t.randn(rng, scale);
  return t;
}

inline std::vector<double> unit_vector(int dim, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(dim));
  double n = 0;
  for (auto& x : v) {
    x = rng.normal(0.0, 1.0);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

// Central finite difference of a scalar-valued function w.r.t. one entry of a
// double tensor.
template <typename F>
double central_diff(TensorD& x, int64_t idx, F&& f, double h = 1e-5) {
  const double orig = x[idx];
  x[idx] = orig + h;
  const double fp = f();
  x[idx] = orig - h;
  const double fm = f();
  x[idx] = orig;
  return (fp - fm) / (2 * h);
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::fabs(got), std::fabs(want), 1e-8});
  return std::fabs(got - want) / denom;
}

}  // namespace oracle
