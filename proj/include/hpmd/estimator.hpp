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
#include <cmath>
#include <compare>
#include <concepts>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <thread>
#include <unordered_map>
#include <vector>

#include "hpmd/generative.hpp"

namespace hpmd {

struct StateAction {
  Index state = 0;
  Index action = 0;
  auto operator<=>(const StateAction&) const = default;
};

/// Anything exposing pi(.|s) as an indexable row: a tabular Policy or an
/// on-demand reconstruction.
template <typename P>
concept PolicySource = requires(const P& policy, Index s) {
  { policy.row(s)(0) } -> std::convertible_to<double>;
  { policy.row(s).size() } -> std::convertible_to<Index>;
};

/// Tree widths, rollout budget and seed of the Monte Carlo lookahead estimator.
struct EstimatorParams {
  int h = 1;
  /// M0: rollouts per leaf state.
  long m_leaf = 1;
  /// M_1..M_h: children sampled per (state, action) at each level.
  std::vector<long> m_branch{1};
  /// H: rollout truncation length.
  long horizon = 1;
  std::uint64_t rng_seed = 0;
  /// Worker threads for leaf rollouts; results do not depend on it.
  int n_threads = 1;

  static EstimatorParams uniform(int h, long m, long m_leaf, long horizon, std::uint64_t seed = 0) {
    EstimatorParams p;
    p.h = h;
    p.m_leaf = m_leaf;
    p.m_branch.assign(static_cast<std::size_t>(std::max(h, 1)), m);
    p.horizon = horizon;
    p.rng_seed = seed;
    return p;
  }

  /// M_level for level in [1, h].
  long branch(int level) const { return m_branch[static_cast<std::size_t>(level - 1)]; }

  void validate() const {
    detail::require(h >= 1, "estimator depth h must be at least 1");
    detail::require(m_leaf >= 1, "M0 must be at least 1");
    detail::require(horizon >= 1, "rollout horizon must be at least 1");
    detail::require(static_cast<int>(m_branch.size()) == h, "need one branch width per level");
    for (long m : m_branch) detail::require(m >= 1, "branch widths must be at least 1");
    detail::require(n_threads >= 1, "n_threads must be at least 1");
  }
};

/// Generative-model calls split by purpose.
struct SampleLedger {
  long long rollout = 0;
  long long branch = 0;
  long long total() const { return rollout + branch; }
};

template <typename Scalar = double>
struct LookaheadEstimate {
  std::map<StateAction, Scalar> q_hat;
  SampleLedger samples;
  /// |S_k| for k = 0..h; S_0 are the rollout leaves and S_h the query states.
  std::vector<Index> layer_sizes;

  Scalar at(Index s, Index a) const { return q_hat.at({s, a}); }

  /// Dense table of the estimates; entries never queried are NaN.
  QTable<Scalar> table(Index n_states, Index n_actions) const {
    QTable<Scalar> q = QTable<Scalar>::Constant(n_states, n_actions,
                                                std::numeric_limits<Scalar>::quiet_NaN());
    for (const auto& [sa, value] : q_hat) q(sa.state, sa.action) = value;
    return q;
  }
};

/// Every (s, a) pair, state-major.
inline std::vector<StateAction> all_state_actions(Index n_states, Index n_actions) {
  std::vector<StateAction> out;
  out.reserve(static_cast<std::size_t>(n_states * n_actions));
  for (Index s = 0; s < n_states; ++s)
    for (Index a = 0; a < n_actions; ++a) out.push_back({s, a});
  return out;
}

/// One truncated discounted return of length `horizon` from `s`; makes exactly
/// `horizon` simulator calls.
template <typename Scalar, PolicySource P>
Scalar rollout_return(const GenerativeModel<Scalar>& model, const P& policy, Index s, long horizon,
                      SplitMix64& rng) {
  Scalar total = 0;
  Scalar weight = 1;
  for (long t = 0; t < horizon; ++t) {
    const Index a = sample_categorical(policy.row(s), rng.uniform());
    total += weight * model.reward(s, a);
    weight *= model.discount();
    s = model.sample_next(s, a, rng);
  }
  return total;
}

/// Mean of m0 truncated returns from s under the policy.
template <typename Scalar, PolicySource P>
Scalar rollout_value(const GenerativeModel<Scalar>& model, const P& policy, Index s, long m0,
                     long horizon, SplitMix64& rng) {
  detail::require(m0 >= 1 && horizon >= 1, "rollout counts must be at least 1");
  Scalar sum = 0;
  for (long j = 0; j < m0; ++j) sum += rollout_return(model, policy, s, horizon, rng);
  return sum / Scalar(m0);
}

namespace detail {

inline constexpr std::uint64_t kLeafTag = 0xffffffffULL;

/// One level of the sampled lookahead tree: distinct states and, for each
/// expanded (state, action), the indices of its sampled children in the level
/// below.
struct TreeLevel {
  std::vector<Index> states;
  std::unordered_map<Index, std::size_t> position;
  std::vector<std::vector<std::size_t>> children;  // [state_pos * A + a] -> child positions

  std::size_t intern(Index s) {
    auto [it, inserted] = position.try_emplace(s, states.size());
    if (inserted) states.push_back(s);
    return it->second;
  }
};

}  // namespace detail

/// Monte Carlo estimate of Q_h^pi at every query under a generative model.
///
/// Builds the layered sampling tree from the query states downwards, drawing
/// M_k children for each (state, action) expanded at level k, seeds the
/// leaves with M0 rollouts of length H, and backs up
///   Q_k(s,a) = r(s,a) + gamma/M_k * sum_children V_k,  V_{k+1}(s) = max_a Q_k(s,a).
/// Values at each (level, state) are computed once and shared by all queries.
/// Every random draw comes from a stream keyed by (iteration, level, state,
/// action, sample index), so results are independent of n_threads.
template <typename Scalar, PolicySource P>
LookaheadEstimate<Scalar> estimate_q_h(const GenerativeModel<Scalar>& model, const P& policy,
                                       std::vector<StateAction> queries,
                                       const EstimatorParams& params, std::uint64_t iteration = 0) {
  params.validate();
  const Index A = model.n_actions();
  const Scalar gamma = model.discount();
  const int h = params.h;
  std::sort(queries.begin(), queries.end());
  queries.erase(std::unique(queries.begin(), queries.end()), queries.end());
  for (const auto& q : queries) {
    detail::require(q.state >= 0 && q.state < model.n_states() && q.action >= 0 && q.action < A,
                    "query out of range");
  }

  auto draw_children = [&](int level, Index s, Index a, detail::TreeLevel& below) {
    const long width = params.branch(level);
    std::vector<std::size_t> kids(static_cast<std::size_t>(width));
    for (long j = 0; j < width; ++j) {
      SplitMix64 rng(stream_key(params.rng_seed, {iteration, std::uint64_t(level),
                                                  std::uint64_t(s), std::uint64_t(a),
                                                  std::uint64_t(j)}));
      kids[static_cast<std::size_t>(j)] = below.intern(model.sample_next(s, a, rng));
    }
    return kids;
  };

  LookaheadEstimate<Scalar> out;
  // levels[k] holds S_k, k = 0..h-1; the query roots form S_h.
  std::vector<detail::TreeLevel> levels(static_cast<std::size_t>(h));
  std::vector<std::vector<std::size_t>> root_children(queries.size());
  std::vector<Index> roots;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    root_children[i] = draw_children(h, queries[i].state, queries[i].action,
                                     levels[static_cast<std::size_t>(h - 1)]);
    if (roots.empty() || roots.back() != queries[i].state) roots.push_back(queries[i].state);
    out.samples.branch += params.branch(h);
  }
  for (int k = h - 1; k >= 1; --k) {
    auto& level = levels[static_cast<std::size_t>(k)];
    auto& below = levels[static_cast<std::size_t>(k - 1)];
    level.children.resize(level.states.size() * static_cast<std::size_t>(A));
    for (std::size_t pos = 0; pos < level.states.size(); ++pos) {
      for (Index a = 0; a < A; ++a) {
        level.children[pos * static_cast<std::size_t>(A) + static_cast<std::size_t>(a)] =
            draw_children(k, level.states[pos], a, below);
        out.samples.branch += params.branch(k);
      }
    }
  }

  // Leaves: V_1 from rollouts, one stream per (leaf, trajectory).
  const auto& leaves = levels[0].states;
  std::vector<Scalar> value(leaves.size());
  auto rollout_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Scalar sum = 0;
      for (long j = 0; j < params.m_leaf; ++j) {
        SplitMix64 rng(stream_key(params.rng_seed, {iteration, 0, std::uint64_t(leaves[i]),
                                                    detail::kLeafTag, std::uint64_t(j)}));
        sum += rollout_return(model, policy, leaves[i], params.horizon, rng);
      }
      value[i] = sum / Scalar(params.m_leaf);
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(params.n_threads), std::max<std::size_t>(leaves.size(), 1));
  if (workers <= 1) {
    rollout_range(0, leaves.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (leaves.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(leaves.size(), begin + chunk);
      if (begin < end) pool.emplace_back(rollout_range, begin, end);
    }
  }
  out.samples.rollout = static_cast<long long>(leaves.size()) * params.m_leaf * params.horizon;

  auto mean_of = [&](const std::vector<std::size_t>& kids, const std::vector<Scalar>& v) {
    Scalar sum = 0;
    for (std::size_t c : kids) sum += v[c];
    return sum / Scalar(kids.size());
  };

  // Backups from level 1 up to level h-1: value holds V_k on S_{k-1}.
  for (int k = 1; k <= h - 1; ++k) {
    const auto& level = levels[static_cast<std::size_t>(k)];
    std::vector<Scalar> next(level.states.size());
    for (std::size_t pos = 0; pos < level.states.size(); ++pos) {
      Scalar best = -std::numeric_limits<Scalar>::infinity();
      for (Index a = 0; a < A; ++a) {
        const auto& kids = level.children[pos * static_cast<std::size_t>(A) + static_cast<std::size_t>(a)];
        best = std::max(best, model.reward(level.states[pos], a) + gamma * mean_of(kids, value));
      }
      next[pos] = best;
    }
    value = std::move(next);
  }

  const Scalar upper = Scalar(1) / (Scalar(1) - gamma);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const Scalar q = model.reward(queries[i].state, queries[i].action) +
                     gamma * mean_of(root_children[i], value);
    out.q_hat[queries[i]] = std::clamp(q, Scalar(0), upper);
  }

  out.layer_sizes.resize(static_cast<std::size_t>(h) + 1);
  for (int k = 0; k < h; ++k)
    out.layer_sizes[static_cast<std::size_t>(k)] = static_cast<Index>(levels[static_cast<std::size_t>(k)].states.size());
  out.layer_sizes[static_cast<std::size_t>(h)] = static_cast<Index>(roots.size());
  return out;
}

/// Simulator calls predicted for a tree with the given layer sizes.
inline SampleLedger predicted_ledger(const EstimatorParams& params, std::span<const Index> layer_sizes,
                                     Index n_actions, std::size_t n_queries) {
  SampleLedger ledger;
  ledger.rollout = static_cast<long long>(layer_sizes[0]) * params.m_leaf * params.horizon;
  ledger.branch = static_cast<long long>(n_queries) * params.branch(params.h);
  for (int k = 1; k < params.h; ++k)
    ledger.branch += static_cast<long long>(layer_sizes[static_cast<std::size_t>(k)]) * n_actions *
                     params.branch(k);
  return ledger;
}

/// Estimator parameters meeting a target suboptimality with high probability.
struct AccuracyBudget {
  EstimatorParams params;
  /// Per-query accuracy b = eps (1-gamma)(1-gamma^h)/4 targeted by the budget.
  double b = 0;
  /// log of the deterministic leaf-count cap |S_0| <= A^h M^h.
  double log_leaf_cap = 0;
  /// Iterations K needed for the geometric term to fall below eps/2.
  long iterations = 1;
  /// True when M hit the 10^6 cap before its fixed point.
  bool capped = false;
};

inline constexpr long kMaxBranchWidth = 1'000'000;

/// Tree widths M, leaf rollouts M0 and horizon H from the concentration bounds,
/// with b = eps(1-gamma)(1-gamma^h)/4 and delta split evenly. M appears on both
/// sides of its own inequality through |S_0| <= A^h M^h; it is resolved by
/// iterating M <- formula(M) from M = 1.
inline AccuracyBudget params_for_accuracy(double gamma, int h, double epsilon, double delta,
                                          long n_actions, long n_queries) {
  detail::require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
  detail::require(h >= 1, "h must be at least 1");
  detail::require(epsilon > 0.0, "epsilon must be positive");
  detail::require(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
  detail::require(n_actions >= 1 && n_queries >= 1, "need at least one action and one query");

  const double g1 = 1.0 - gamma;
  const double gh = std::pow(gamma, double(h));
  const double b = epsilon * g1 * (1.0 - gh) / 4.0;
  const double delta_half = delta / 2.0;
  // Smallest integer strictly above x, floored at 1.
  auto above = [](double x) -> long {
    if (!(x >= 1.0)) return 1;
    // Saturate instead of overflowing; such budgets are unusable anyway.
    if (x >= 4e18) return 4'000'000'000'000'000'000L;
    return static_cast<long>(std::floor(x)) + 1;
  };
  auto log_leaves = [&](long m) { return h * std::log(double(n_actions)) + h * std::log(double(m)); };

  const double m_coeff = 9.0 * std::pow(gamma, 4.0) * std::pow(1.0 - std::pow(gamma, double(h - 1)), 2.0) /
                         (std::pow(g1, 4.0) * b * b);
  auto m_formula = [&](long m) {
    const double log_arg = std::log(2.0 * h * double(n_actions) * double(n_queries) / delta_half) + log_leaves(m);
    return above(m_coeff * log_arg);
  };

  AccuracyBudget out;
  long m = 1;
  for (int it = 0; it < 10'000; ++it) {
    long next = m_formula(m);
    if (next > kMaxBranchWidth) {
      next = kMaxBranchWidth;
      out.capped = true;
    }
    if (next == m) break;
    m = next;
  }
  out.log_leaf_cap = log_leaves(m);

  const double m0_coeff = 9.0 * std::pow(gamma, 2.0 * h) / (g1 * g1 * b * b);
  const long m0 = above(m0_coeff * (std::log(2.0 * double(n_queries) / delta_half) + out.log_leaf_cap));
  const long horizon = above(std::log(3.0 * gh / (b * g1)) / g1);

  out.params = EstimatorParams::uniform(h, m, m0, horizon);
  out.b = b;
  out.iterations = above(std::log(4.0 / (epsilon * g1 * (1.0 - gh))) / (double(h) * g1));
  return out;
}

}  // namespace hpmd
