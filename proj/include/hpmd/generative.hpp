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

#include <algorithm>
#include <atomic>
#include <vector>

#include "hpmd/mdp.hpp"
#include "hpmd/random.hpp"

namespace hpmd {

/// Simulator access to an MDP: next states are drawn on demand, rewards are a
/// known deterministic function of (s, a).
template <typename Scalar = double>
class GenerativeModel {
 public:
  virtual ~GenerativeModel() = default;

  virtual Index n_states() const = 0;
  virtual Index n_actions() const = 0;
  virtual Scalar discount() const = 0;
  virtual Scalar reward(Index s, Index a) const = 0;

  /// Draws s' ~ P(.|s, a) using the caller's stream.
  virtual Index sample_next(Index s, Index a, SplitMix64& rng) const = 0;
};

/// Generative view of a TabularMdp via per-row inverse-CDF tables.
template <typename Scalar = double>
class TabularModel final : public GenerativeModel<Scalar> {
 public:
  explicit TabularModel(TabularMdp<Scalar> mdp) : mdp_(std::move(mdp)) {
    const auto& P = mdp_.transition();
    offsets_.reserve(static_cast<std::size_t>(P.rows()) + 1);
    offsets_.push_back(0);
    for (Index row = 0; row < P.rows(); ++row) {
      Scalar cumulative = 0;
      for (typename SparseMatrix<Scalar>::InnerIterator it(P, row); it; ++it) {
        if (it.value() <= Scalar(0)) continue;
        cumulative += it.value();
        targets_.push_back(it.col());
        cdf_.push_back(cumulative);
      }
      offsets_.push_back(targets_.size());
    }
  }

  Index n_states() const override { return mdp_.n_states(); }
  Index n_actions() const override { return mdp_.n_actions(); }
  Scalar discount() const override { return mdp_.discount(); }
  Scalar reward(Index s, Index a) const override { return mdp_.reward(s, a); }

  Index sample_next(Index s, Index a, SplitMix64& rng) const override {
    const auto row = static_cast<std::size_t>(mdp_.row_index(s, a));
    const std::size_t begin = offsets_[row];
    const std::size_t end = offsets_[row + 1];
    if (end - begin == 1) {
      rng();  // one draw per call keeps stream positions independent of the kernel shape
      return targets_[begin];
    }
    const Scalar u = static_cast<Scalar>(rng.uniform());
    const auto first = cdf_.begin() + static_cast<std::ptrdiff_t>(begin);
    const auto last = cdf_.begin() + static_cast<std::ptrdiff_t>(end);
    auto hit = std::upper_bound(first, last, u);
    if (hit == last) --hit;
    return targets_[static_cast<std::size_t>(hit - cdf_.begin())];
  }

  const TabularMdp<Scalar>& mdp() const { return mdp_; }

 private:
  TabularMdp<Scalar> mdp_;
  std::vector<std::size_t> offsets_;
  std::vector<Index> targets_;
  std::vector<Scalar> cdf_;
};

/// Decorator counting every simulator call made through it.
template <typename Scalar = double>
class CountingModel final : public GenerativeModel<Scalar> {
 public:
  explicit CountingModel(const GenerativeModel<Scalar>& inner) : inner_(inner) {}

  Index n_states() const override { return inner_.n_states(); }
  Index n_actions() const override { return inner_.n_actions(); }
  Scalar discount() const override { return inner_.discount(); }
  Scalar reward(Index s, Index a) const override { return inner_.reward(s, a); }

  Index sample_next(Index s, Index a, SplitMix64& rng) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.sample_next(s, a, rng);
  }

  long long calls() const { return calls_.load(); }
  void reset() { calls_.store(0); }

 private:
  const GenerativeModel<Scalar>& inner_;
  mutable std::atomic<long long> calls_{0};
};

}  // namespace hpmd
