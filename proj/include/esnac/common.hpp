/*
 * Copyright 2026 The esnac Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace esnac {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ESNAC_DEFINE_ERROR(Name)                  \
  class Name : public Error {                     \
   public:                                        \
    explicit Name(const std::string& what)        \
        : Error(std::string(#Name ": ") + what) {} \
  };

ESNAC_DEFINE_ERROR(InvalidGraph)
ESNAC_DEFINE_ERROR(InvalidPlan)
ESNAC_DEFINE_ERROR(TooManyLayers)
ESNAC_DEFINE_ERROR(OffsetOverflow)
ESNAC_DEFINE_ERROR(Inconsistent)
ESNAC_DEFINE_ERROR(DimensionMismatch)
ESNAC_DEFINE_ERROR(NumericalFailure)
ESNAC_DEFINE_ERROR(NonFiniteLoss)
ESNAC_DEFINE_ERROR(EmptyCandidateSet)
ESNAC_DEFINE_ERROR(BackendTimeout)
ESNAC_DEFINE_ERROR(BackendMalformedResponse)
ESNAC_DEFINE_ERROR(BackendReportedFailure)
ESNAC_DEFINE_ERROR(CorruptLog)
ESNAC_DEFINE_ERROR(WidthMismatch)
ESNAC_DEFINE_ERROR(ConfigError)

#undef ESNAC_DEFINE_ERROR

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent stream seed from a master seed and a list of tags.
/// The result depends only on the arguments, never on call order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

inline std::uint64_t tag(std::string_view purpose) { return fnv1a(purpose); }

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

}  // namespace esnac
