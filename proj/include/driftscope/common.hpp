#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace driftscope {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kToolVersion = "0.3.0";

// FNV-1a over a byte string. Used for seed derivation and config hashes.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent RNG stream per purpose, derived from the master seed and a fixed label,
// so that consumers never share draws.
inline std::mt19937_64 make_stream(std::uint64_t master_seed, std::string_view label) {
  std::uint64_t h = fnv1a64(label);
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

std::string format_double(double x);  // "%.17g"

}  // namespace driftscope
