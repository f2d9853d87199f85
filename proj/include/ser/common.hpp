// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#ifndef SERKIT_COMMON_HPP_
#define SERKIT_COMMON_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ser {

// Base class of every domain error raised by the toolkit. CLI maps these to
// exit code 1; anything else escaping to main is a bug.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define SERKIT_DEFINE_ERROR(Name)                                  \
  class Name : public ::ser::Error {                               \
   public:                                                         \
    explicit Name(const std::string& msg) : ::ser::Error(msg) {}   \
  }

// The four-class label set. The integer order is the canonical tie-break
// order used by argmax everywhere.
enum class Emotion : int {
  kNeutral = 0,
  kHappy = 1,
  kSad = 2,
  kAngry = 3,
};

inline constexpr int kNumEmotions = 4;

const char* emotion_name(Emotion e);
// Accepts the canonical lowercase names only; throws ser::Error otherwise.
Emotion emotion_from_name(std::string_view name);

// FNV-1a over arbitrary bytes. Used for sub-seed derivation and for the
// content-addressed featurization cache.
std::uint64_t fnv1a64(const void* data, std::size_t len);
inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

std::uint64_t splitmix64(std::uint64_t x);

// Every source of randomness in a run is keyed off the single run seed via a
// named stream, so components stay reproducible independently of each other.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
  return splitmix64(base ^ fnv1a64(stream));
}

// Deterministic RNG. Normal deviates are generated by Box-Muller on top of
// the mt19937_64 stream rather than std::normal_distribution, whose output
// is implementation defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Normal(0, sigma) resampled until within 2 sigma.
  double truncated_normal(double sigma);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// CRC-32 (IEEE 802.3, reflected). `crc` chains across calls; start from 0.
std::uint32_t crc32(std::uint32_t crc, const void* data, std::size_t len);

}  // namespace ser

#endif  // SERKIT_COMMON_HPP_
