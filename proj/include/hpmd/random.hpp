// Copyright 2026 The hpmd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

#include "hpmd/types.hpp"

namespace hpmd {

/// SplitMix64 finalizer (Steele, Lea & Flood).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream key from a root seed and a tuple of
/// coordinates, e.g. (iteration, level, state, action, sample index).
inline std::uint64_t stream_key(std::uint64_t root, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = mix64(root + 0x9e3779b97f4a7c15ULL);
  for (std::uint64_t c : coords) h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

/// SplitMix64 generator; satisfies UniformRandomBitGenerator. Streams are
/// cheap to construct, so every tree node or rollout can own one.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform double in [0,1) with 53 random bits; identical on every platform.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Inverse-CDF draw from a probability row given u in [0,1). Roundoff at the
/// top end falls back to the last action with positive mass.
template <typename Derived>
Index sample_categorical(const Eigen::DenseBase<Derived>& probs, double u) {
  using Scalar = typename Derived::Scalar;
  Scalar cumulative = 0;
  Index last_positive = 0;
  for (Index a = 0; a < probs.size(); ++a) {
    if (probs(a) <= Scalar(0)) continue;
    cumulative += probs(a);
    last_positive = a;
    if (static_cast<Scalar>(u) < cumulative) return a;
  }
  return last_positive;
}

}  // namespace hpmd
