#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace panini {

// Error hierarchy. Each error carries a stable machine-readable class name
// that the CLI maps to an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string error_class, const std::string& msg)
      : std::runtime_error(error_class + ": " + msg), class_(std::move(error_class)) {}
  const std::string& error_class() const { return class_; }

 private:
  std::string class_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& msg) : Error("invalid-argument", msg) {}
};

class InvalidState : public Error {
 public:
  explicit InvalidState(const std::string& msg) : Error("invalid-state", msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io-error", msg) {}
};

class IncompatibleCheckpoint : public Error {
 public:
  explicit IncompatibleCheckpoint(const std::string& msg)
      : Error("incompatible-checkpoint", msg) {}
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(const std::string& msg) : Error("training-diverged", msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

// splitmix64: cheap, well-mixed 64-bit hash used for deriving independent
// seed streams from a master seed. Never used as the sampling RNG itself.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive the seed for stream `stream` of a master seed. Distinct streams give
// statistically independent generators; same inputs always give the same seed.
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream));
}

// Deterministic RNG wrapper. All randomness in the project flows through
// explicitly seeded instances of this class; there is no global RNG state.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  // Inclusive on both ends.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    std::uniform_int_distribution<int64_t> d(lo, hi);
    return d(gen_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }
  uint64_t next_u64() { return gen_(); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// FNV-1a over raw bytes; used for parameter-freeze checks and folder hashing.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace panini
