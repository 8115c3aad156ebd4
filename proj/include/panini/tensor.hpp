#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <sstream>
#include <vector>

#include "panini/common.hpp"

namespace panini {

// 64-byte-aligned storage for tensor buffers. Keeping every buffer at a fixed
// alignment residue makes vectorized reductions over mapped memory use the
// same prologue/epilogue split on every run, so results are bit-reproducible
// within a process regardless of heap layout.
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
};

// Dense row-major N-d array. The universal carrier for images, feature maps
// and parameters. Rank-3 tensors {C,H,W} are the FeatureMap convention;
// batched activations are rank-4 {N,C,H,W}.
template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    v_.assign(static_cast<size_t>(numel_of(shape_)), T(0));
  }
  TensorT(std::vector<int> shape, T fill) : shape_(std::move(shape)) {
    v_.assign(static_cast<size_t>(numel_of(shape_)), fill);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw InvalidArgument("negative tensor dimension");
      n *= d;
    }
    return n;
  }

  bool empty() const { return v_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(v_.size()); }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  T& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  // rank-3 {C,H,W} accessor
  T& at3(int c, int h, int w) {
    return v_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  const T& at3(int c, int h, int w) const {
    return v_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  // rank-4 {N,C,H,W} accessor
  T& at4(int n, int c, int h, int w) {
    return v_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(int n, int c, int h, int w) const {
    return v_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  // rank-2 {R,C} accessor
  T& at2(int r, int c) { return v_[static_cast<size_t>(r) * shape_[1] + c]; }
  const T& at2(int r, int c) const { return v_[static_cast<size_t>(r) * shape_[1] + c]; }

  void fill(T x) { std::fill(v_.begin(), v_.end(), x); }
  void zero() { fill(T(0)); }

  TensorT reshaped(std::vector<int> s) const {
    if (numel_of(s) != numel()) throw InvalidArgument("reshape: element count mismatch");
    TensorT out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "{";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "}";
    return os.str();
  }

  void add_scaled(const TensorT& o, T scale) {
    for (int64_t i = 0; i < numel(); ++i) v_[i] += scale * o.v_[i];
  }
  void scale(T s) {
    for (auto& x : v_) x *= s;
  }

  T min_value() const { return *std::min_element(v_.begin(), v_.end()); }
  T max_value() const { return *std::max_element(v_.begin(), v_.end()); }
  double sum() const {
    double s = 0;
    for (const auto& x : v_) s += static_cast<double>(x);
    return s;
  }
  double mean() const { return numel() ? sum() / static_cast<double>(numel()) : 0.0; }
  double l2_norm() const {
    double s = 0;
    for (const auto& x : v_) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
  }
  bool all_finite() const {
    for (const auto& x : v_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(v_[i]);
    return out;
  }

  // Fill with N(0, stddev) samples in element order.
  void randn(Rng& rng, double stddev) {
    for (auto& x : v_) x = static_cast<T>(rng.normal(0.0, stddev));
  }
  void rand_uniform(Rng& rng, double lo, double hi) {
    for (auto& x : v_) x = static_cast<T>(rng.uniform(lo, hi));
  }

 private:
  std::vector<int> shape_;
  std::vector<T, AlignedAlloc<T>> v_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Spec domain aliases. A FeatureMap is a rank-3 {C,H,W} tensor; LatentCodes
// are the {n_latents, latent_dim} style matrix; a DegradationRepresentation
// is the unit-norm rank-1 {256} embedding.
using FeatureMap = Tensor;
using LatentCodes = Tensor;
using DegradationRepresentation = Tensor;

inline uint64_t tensor_bytes_hash(const Tensor& t, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(t.data(), sizeof(float) * static_cast<size_t>(t.numel()), h);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw InvalidArgument("max_abs_diff: shape mismatch");
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace panini
