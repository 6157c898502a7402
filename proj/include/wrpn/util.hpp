#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wrpn {

// Error taxonomy. Everything user-facing derives from wrpn::error so the CLI
// can map library failures to exit code 1 in one place.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches.
class shape_error : public error {
public:
  using error::error;
};

// Invalid configuration: bad bit-widths, non-integral conv output extents,
// impossible widening, malformed descriptors.
class config_error : public error {
public:
  using error::error;
};

// File-level failures: bad magic, truncation, malformed JSON.
class parse_error : public error {
public:
  using error::error;
};

// Checkpoint does not match the descriptor it is being loaded against.
class incompat_error : public error {
public:
  using error::error;
};

// Bad runtime input values (e.g. label out of range).
class value_error : public error {
public:
  using error::error;
};

// API misuse (e.g. backward without a recorded forward).
class usage_error : public error {
public:
  using error::error;
};

// Broken internal invariant; indicates a bug, not bad user input.
class internal_error : public error {
public:
  using error::error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// xoshiro256** seeded through splitmix64. Self-contained so that streams are
// identical across standard libraries and the full state (4 words) can be
// written into checkpoints.
class Rng {
public:
  Rng() : Rng(0x9e3779b97f4a7c15ULL) {}

  explicit Rng(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Modulo bias is irrelevant for the index ranges used here (n << 2^64),
    // and a plain modulus keeps the stream layout stable.
    return next_u64() % n;
  }

  // Standard normal via Box-Muller. Draws two uniforms per call and keeps no
  // cached spare, so the consumed stream length is input-independent.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  std::array<std::uint64_t, 4> state() const {
    return {state_[0], state_[1], state_[2], state_[3]};
  }

  void set_state(const std::array<std::uint64_t, 4>& s) {
    std::copy(s.begin(), s.end(), state_);
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
};

// ---------------------------------------------------------------------------
// Worker threads.
//
// Splits [0, n) into contiguous chunks, one per worker. Callers must only
// write to locations owned by their indices; each index is visited exactly
// once and accumulations inside one index stay sequential, so results do not
// depend on the worker count.
inline unsigned max_threads() {
  if (const char* env = std::getenv("WRPN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

inline void parallel_for(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (n <= 0) return;
  const unsigned workers =
      static_cast<unsigned>(std::min<std::int64_t>(max_threads(), n));
  if (workers <= 1) {
    body(0, n);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    const std::int64_t begin = static_cast<std::int64_t>(w) * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit, used for descriptor hashes in checkpoints.
inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// Little-endian binary IO helpers (explicit byte order, host-independent).
namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

// Cursor over an in-memory buffer; all failures report the byte offset.
class Reader {
public:
  Reader(const std::string& buf, std::string origin)
      : buf_(buf), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool exhausted() const { return pos_ == buf_.size(); }

  void expect_end() {
    if (!exhausted())
      throw parse_error(origin_ + ": trailing bytes at offset " + std::to_string(pos_));
  }

private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw parse_error(origin_ + ": truncated at offset " + std::to_string(pos_) +
                        " (needed " + std::to_string(n) + " more bytes)");
  }

  const std::string& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace io

}  // namespace wrpn
