#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace planrl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for one purpose (`stream`) under a run seed.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x51ed270b27f1ULL)));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng deserialize_rng(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  return rng;
}

// Named streams so that reductions between agent variants consume
// randomness identically.
namespace stream {
inline constexpr std::uint64_t actor_init = 1;
inline constexpr std::uint64_t critic_init = 2;
inline constexpr std::uint64_t exploration = 3;
inline constexpr std::uint64_t arbitration = 4;
inline constexpr std::uint64_t replay = 5;
inline constexpr std::uint64_t env_reset = 6;
inline constexpr std::uint64_t planner = 7;
inline constexpr std::uint64_t target_noise = 8;
inline constexpr std::uint64_t supervised = 9;
inline constexpr std::uint64_t demos = 10;
inline constexpr std::uint64_t evaluation = 11;
}  // namespace stream

}  // namespace planrl
