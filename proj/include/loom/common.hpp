// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace loom {

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Errors. Every failure surfaces as a subclass of loom::Error with a stable
// category tag, so the CLI can print "error: <category>: <message>" and tests
// can match on the failure class instead of message text.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(category + ": " + message),
        category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

private:
  std::string category_;
};

// Violated precondition or API misuse.
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};

// Tensor shape disagreement; message names the offending node or tensor.
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

// NaN/Inf produced by a primitive; message names the node.
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

// Corpus or config parsing problems.
struct DataError : Error {
  explicit DataError(const std::string& m) : Error("data", m) {}
};

// Filesystem-level failure (open/read/write).
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

// Serialized artifact carries an unsupported format version.
struct VersionError : Error {
  explicit VersionError(const std::string& m) : Error("version", m) {}
};

// Payload checksum mismatch.
struct ChecksumError : Error {
  explicit ChecksumError(const std::string& m) : Error("checksum", m) {}
};

// File ends before the declared payload does.
struct TruncationError : Error {
  explicit TruncationError(const std::string& m) : Error("truncated", m) {}
};

// Attempt to claim a parameter element that already has an owner.
struct OverlapError : Error {
  explicit OverlapError(const std::string& m) : Error("overlap", m) {}
};

// Domain budget exceeds the remaining free pool.
struct CapacityError : Error {
  explicit CapacityError(const std::string& m) : Error("capacity", m) {}
};

#define LOOM_CHECK(cond, exc, msg)        \
  do {                                    \
    if (!(cond)) throw exc(msg);          \
  } while (0)

// ---------------------------------------------------------------------------
// Deterministic RNG. Uniform draws are derived from raw mt19937_64 bits, not
// from std::*_distribution, so streams reproduce bit-for-bit across standard
// library implementations.
// ---------------------------------------------------------------------------

class Rng {
public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t bits() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased via rejection.
  uint64_t below(uint64_t n) {
    if (n == 0) throw ContractError("Rng::below requires n > 0");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller, built on uniform() so draws are
  // reproducible across standard libraries.
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 == 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
  std::mt19937_64 gen_;
};

// Mixes a seed with a stream tag (splitmix64 finalizer), used to derive
// independent per-purpose streams from one experiment seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Little-endian scalar I/O (explicit byte order so serialized artifacts are
// portable) and CRC-32 (IEEE) for payload integrity.
// ---------------------------------------------------------------------------

inline void append_u64_le(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void append_u32_le(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void append_f64_le(std::vector<uint8_t>& out, double v) {
  append_u64_le(out, std::bit_cast<uint64_t>(v));
}

inline uint64_t read_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline uint32_t read_u32_le(const unsigned char* p) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline double read_f64_le(const unsigned char* p) {
  return std::bit_cast<double>(read_u64_le(p));
}

inline uint32_t crc32(const void* data, size_t len, uint32_t seed = 0) {
  static const auto table = [] {
    std::vector<uint32_t> t(256);
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xffffffffu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

}  // namespace loom
