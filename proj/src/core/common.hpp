#ifndef CKCONV_CORE_COMMON_HPP_
#define CKCONV_CORE_COMMON_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ckconv {

// Error taxonomy. Each kind maps onto the process exit code the CLI uses:
// config 2, data 3, divergence 4, everything internal 1.
enum class ErrorKind {
  internal,
  contract,    // API misuse: non-scalar loss, detached tape, bad layout
  dimension,   // incompatible shapes
  singular,    // zero-norm weight row
  config,
  horizon,     // kernel grid exceeds the trained horizon
  data,
  divergence,  // non-finite values while training
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const {
    switch (kind_) {
      case ErrorKind::config:
      case ErrorKind::horizon:
        return 2;
      case ErrorKind::data:
        return 3;
      case ErrorKind::divergence:
        return 4;
      default:
        return 1;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic RNG used everywhere. The distributions are implemented by
// hand so a given seed yields the same stream on every platform/stdlib.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds, unbiased via rejection
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) fail(ErrorKind::contract, "uniform_int: empty range");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return lo + static_cast<int64_t>(r % span);
  }

  // Independent derived stream. Depends only on the original seed and the
  // tag, never on how much of this stream has been consumed.
  Rng fork(uint64_t tag) const { return Rng(splitmix64(seed_ ^ splitmix64(tag + 0x632be59bd9b4e019ull))); }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace ckconv

#endif  // CKCONV_CORE_COMMON_HPP_
