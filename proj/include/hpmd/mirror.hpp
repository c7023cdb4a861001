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
#include <functional>
#include <limits>
#include <numeric>
#include <string_view>
#include <vector>

#include "hpmd/bellman.hpp"

namespace hpmd {

/// The two mirror maps supported for the proximal step.
///  - NegativeEntropy: Bregman divergence is KL, update is multiplicative.
///  - SquaredEuclidean: divergence is half the squared distance, update is a
///    Euclidean projection onto the simplex.
enum class MirrorMap { NegativeEntropy, SquaredEuclidean };

inline std::string_view to_string(MirrorMap map) {
  return map == MirrorMap::NegativeEntropy ? "kl" : "euclidean";
}

/// D_phi(p, q). Under NegativeEntropy this is KL(p||q) with 0 log 0 = 0, and it
/// is +infinity when q vanishes where p does not.
template <typename Derived1, typename Derived2>
typename Derived1::Scalar bregman(MirrorMap map, const Eigen::MatrixBase<Derived1>& p,
                                  const Eigen::MatrixBase<Derived2>& q) {
  using Scalar = typename Derived1::Scalar;
  detail::require(p.size() == q.size() && p.size() > 0, "bregman: size mismatch");
  if (map == MirrorMap::SquaredEuclidean) {
    Scalar total = 0;
    for (Index a = 0; a < p.size(); ++a) total += (p(a) - q(a)) * (p(a) - q(a));
    return Scalar(0.5) * total;
  }
  Scalar total = 0;
  for (Index a = 0; a < p.size(); ++a) {
    detail::require(q(a) >= Scalar(0) && p(a) >= Scalar(0), "bregman: negative probability");
    if (p(a) == Scalar(0)) continue;
    if (q(a) == Scalar(0)) return std::numeric_limits<Scalar>::infinity();
    total += p(a) * std::log(p(a) / q(a));
  }
  return std::max(total, Scalar(0));
}

/// D_phi(delta_a, q) for the deterministic row at action a.
template <typename Derived>
typename Derived::Scalar bregman_to_vertex(MirrorMap map, Index a,
                                           const Eigen::MatrixBase<Derived>& q) {
  using Scalar = typename Derived::Scalar;
  if (map == MirrorMap::NegativeEntropy) {
    if (q(a) <= Scalar(0)) return std::numeric_limits<Scalar>::infinity();
    return -std::log(q(a));
  }
  return Scalar(0.5) * (q.squaredNorm() - Scalar(2) * q(a) + Scalar(1));
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
template <typename Derived>
Vector<typename Derived::Scalar> project_to_simplex(const Eigen::MatrixBase<Derived>& y) {
  using Scalar = typename Derived::Scalar;
  const Index n = y.size();
  detail::require(n > 0, "cannot project an empty vector");
  const Vector<Scalar> values = y;
  std::vector<Scalar> sorted(values.data(), values.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  Scalar cumulative = 0;
  Scalar threshold = 0;
  for (Index j = 0; j < n; ++j) {
    cumulative += sorted[static_cast<std::size_t>(j)];
    const Scalar candidate = (cumulative - Scalar(1)) / Scalar(j + 1);
    if (sorted[static_cast<std::size_t>(j)] - candidate > Scalar(0)) threshold = candidate;
  }
  return (values.array() - threshold).cwiseMax(Scalar(0)).matrix();
}

/// Deterministic row at the lowest-index maximizer of q_row.
template <typename Derived>
Vector<typename Derived::Scalar> greedy_row(const Eigen::MatrixBase<Derived>& q_row) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> row = Vector<Scalar>::Zero(q_row.size());
  row(detail::argmax_lowest(q_row)) = Scalar(1);
  return row;
}

/// Solves argmax_p { eta <q_row, p> - D_phi(p, old_row) } over the simplex.
///
/// eta = +infinity gives the deterministic greedy row. Under NegativeEntropy the
/// multiplicative update is evaluated in log space after subtracting max q, so
/// very large finite eta saturates to the greedy face instead of overflowing.
/// Zero entries of old_row stay zero under NegativeEntropy.
template <typename Derived1, typename Derived2>
Vector<typename Derived1::Scalar> prox_update(MirrorMap map, const Eigen::MatrixBase<Derived1>& q_row,
                                              const Eigen::MatrixBase<Derived2>& old_row,
                                              typename Derived1::Scalar eta) {
  using Scalar = typename Derived1::Scalar;
  detail::require(q_row.size() == old_row.size() && q_row.size() > 0, "prox_update: size mismatch");
  detail::require(!std::isnan(eta) && eta >= Scalar(0), "prox_update: eta must be nonnegative");
  detail::require(detail::is_distribution(old_row), "prox_update: old row is not a distribution");
  if (std::isinf(eta)) return greedy_row(q_row);

  const Scalar q_max = q_row.maxCoeff();
  const Index n = q_row.size();
  Vector<Scalar> shifted(n);
  for (Index a = 0; a < n; ++a) {
    const Scalar gap = q_row(a) - q_max;
    shifted(a) = gap == Scalar(0) ? Scalar(0) : eta * gap;
  }

  if (map == MirrorMap::NegativeEntropy) {
    Vector<Scalar> logits(n);
    for (Index a = 0; a < n; ++a) {
      logits(a) = old_row(a) > Scalar(0) ? std::log(old_row(a)) + shifted(a)
                                         : -std::numeric_limits<Scalar>::infinity();
    }
    const Scalar top = logits.maxCoeff();
    if (!std::isfinite(top)) {
      // Every supported logit saturated: the limit is the best supported action.
      Index best = -1;
      for (Index a = 0; a < n; ++a) {
        if (old_row(a) > Scalar(0) && (best < 0 || q_row(a) > q_row(best))) best = a;
      }
      Vector<Scalar> out = Vector<Scalar>::Zero(n);
      out(best) = Scalar(1);
      return out;
    }
    // std::exp per entry: the vectorized exp clamps large negative inputs to a denormal.
    Vector<Scalar> out(n);
    for (Index a = 0; a < n; ++a) out(a) = std::exp(logits(a) - top);
    out /= out.sum();
    return out;
  }

  Vector<Scalar> target(n);
  for (Index a = 0; a < n; ++a) target(a) = old_row(a) + shifted(a);
  // Entries more than 1 below the maximum are zero after projection; flooring
  // them keeps the threshold search finite.
  const Scalar floor = target.maxCoeff() - Scalar(2);
  target = target.cwiseMax(floor);
  return project_to_simplex(target);
}

/// Per-state lower bound min_{a in greedy(s)} D_phi(delta_a, pi_s).
template <typename Scalar>
Vector<Scalar> greedy_divergences(MirrorMap map, const GreedySets& greedy,
                                  const Policy<Scalar>& old_policy) {
  detail::require(static_cast<Index>(greedy.size()) == old_policy.n_states(),
                  "greedy sets must cover every state");
  Vector<Scalar> out(old_policy.n_states());
  for (Index s = 0; s < old_policy.n_states(); ++s) {
    const auto& actions = greedy[static_cast<std::size_t>(s)];
    detail::require(!actions.empty(), "empty greedy set at state " + std::to_string(s));
    const auto row = old_policy.row(s).transpose();
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (Index a : actions) best = std::min(best, bregman_to_vertex(map, a, row));
    out(s) = best;
  }
  return out;
}

/// (1/c_k) max_s min_{a in greedy(s)} D_phi(delta_a, pi_s): the smallest
/// uniform stepsize admitted by the linear-rate analysis.
template <typename Scalar>
Scalar adaptive_stepsize(MirrorMap map, const GreedySets& greedy, const Policy<Scalar>& old_policy,
                         Scalar c_k) {
  detail::require(c_k > Scalar(0), "c_k must be positive");
  return greedy_divergences(map, greedy, old_policy).maxCoeff() / c_k;
}

/// Row spreading mass uniformly over the exact maximizers of q_row.
template <typename Derived>
Vector<typename Derived::Scalar> uniform_greedy_row(const Eigen::MatrixBase<Derived>& q_row) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = q_row.maxCoeff();
  Vector<Scalar> row(q_row.size());
  for (Index a = 0; a < q_row.size(); ++a) row(a) = q_row(a) == top ? Scalar(1) : Scalar(0);
  row /= row.sum();
  return row;
}

/// State-local stepsize D_phi(g, old_row) / c_k, with g uniform on the exact
/// argmax of q_row.
template <typename Derived1, typename Derived2>
typename Derived1::Scalar state_stepsize(MirrorMap map, const Eigen::MatrixBase<Derived1>& q_row,
                                         const Eigen::MatrixBase<Derived2>& old_row,
                                         typename Derived1::Scalar c_k) {
  detail::require(c_k > 0, "c_k must be positive");
  const auto target = uniform_greedy_row(q_row);
  return bregman(map, target, old_row) / c_k;
}

enum class StepsizeMode { Adaptive, Infinite };

/// Whether one stepsize is shared by all states or computed state by state.
enum class StepsizeScope { Uniform, PerState };

/// Sequence c_k > 0 and how the stepsize is derived from it.
template <typename Scalar = double>
struct StepsizeSchedule {
  StepsizeMode mode = StepsizeMode::Adaptive;
  StepsizeScope scope = StepsizeScope::Uniform;
  std::function<Scalar(long)> c;

  Scalar c_at(long k) const { return c(k); }

  /// c_k = gamma^{2h(k+1)}.
  static StepsizeSchedule per_depth(Scalar gamma, int h) {
    return {StepsizeMode::Adaptive, StepsizeScope::Uniform,
            [gamma, h](long k) { return std::pow(gamma, Scalar(2 * h) * Scalar(k + 1)); }};
  }

  /// c_k = gamma^{2(k+1)}, identical for every depth.
  static StepsizeSchedule shared(Scalar gamma) {
    return {StepsizeMode::Adaptive, StepsizeScope::Uniform,
            [gamma](long k) { return std::pow(gamma, Scalar(2) * Scalar(k + 1)); }};
  }

  /// Greedy (policy-iteration) limit; c is kept only for bound reporting.
  static StepsizeSchedule infinite() {
    return {StepsizeMode::Infinite, StepsizeScope::Uniform, [](long) { return Scalar(0); }};
  }
};

}  // namespace hpmd
