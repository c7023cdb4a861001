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

#include <chrono>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "hpmd/bounds.hpp"
#include "hpmd/estimator.hpp"
#include "hpmd/mirror.hpp"

namespace hpmd {

enum class RunMode { Exact, Inexact };

template <typename Scalar = double>
struct IterationRecord {
  /// k = 1..K: quantities of the update producing pi_k from pi_{k-1}.
  long iteration = 0;
  /// ||V* - V^{pi_k}||_inf; NaN when no tabular reference is available.
  Scalar gap = std::numeric_limits<Scalar>::quiet_NaN();
  /// Right-hand side of the applicable rate bound at k; NaN when not recorded.
  Scalar bound = std::numeric_limits<Scalar>::quiet_NaN();
  /// Stepsize used; the largest one under per-state scope.
  Scalar eta = 0;
  Scalar c_k = 0;
  long long samples_iter = 0;
  long long samples_cum = 0;
  double wall_ms = 0;
};

template <typename Scalar = double>
struct IterateTrace {
  Scalar initial_gap = std::numeric_limits<Scalar>::quiet_NaN();
  std::vector<IterationRecord<Scalar>> records;
  SampleLedger ledger;
  /// max_k ||Q_hat_k - Q_h^{pi_k}||_inf when a tabular reference is available.
  Scalar max_estimation_error = std::numeric_limits<Scalar>::quiet_NaN();
};

template <typename Scalar = double>
struct RunConfig {
  int h = 1;
  long n_iters = 1;
  MirrorMap mirror = MirrorMap::NegativeEntropy;
  StepsizeSchedule<Scalar> schedule;
  RunMode mode = RunMode::Exact;
  std::optional<EstimatorParams> estimator;
  std::uint64_t seed = 0;
  bool record_bounds = true;
  /// Exact mode stops once the gap is at or below this value (0 disables).
  Scalar gap_tolerance = 0;
  /// Known uniform bound b on the lookahead error, used for the inexact bound.
  /// When absent and a tabular reference exists, the running maximum of the
  /// measured error is used instead.
  std::optional<Scalar> error_level;
  bool timing = false;
  /// Called after every iteration; returning false stops the run.
  std::function<bool(const IterationRecord<Scalar>&)> on_iteration;

  void validate() const {
    detail::require(h >= 1, "h must be at least 1");
    detail::require(n_iters >= 1, "n_iters must be at least 1");
    detail::require(static_cast<bool>(schedule.c), "stepsize schedule is unset");
    detail::require(mode == RunMode::Exact || estimator.has_value(),
                    "inexact mode needs estimator parameters");
    if (estimator) detail::require(estimator->h == h, "estimator depth must equal h");
  }
};

/// What an iteration sees: lookahead values (exact or estimated) of pi_k.
template <typename Scalar>
struct OracleAnswer {
  QTable<Scalar> q;
  SampleLedger samples;
};

/// Q-oracle: (pi_k, k, V^{pi_k} or nullptr) -> lookahead values.
template <typename Scalar>
using LookaheadOracle =
    std::function<OracleAnswer<Scalar>(const Policy<Scalar>&, long, const VTable<Scalar>*)>;

namespace detail {

/// Sanitizes a zero stepsize: every row is then already on the greedy face, so
/// any positive eta gives the same update; the largest finite value keeps the
/// update saturated rather than inert.
template <typename Scalar>
Scalar nonzero_stepsize(Scalar eta) {
  return eta > Scalar(0) ? eta : std::numeric_limits<Scalar>::max();
}

}  // namespace detail

/// One proximal update pi_k -> pi_{k+1} from lookahead values q. Returns the
/// new policy and the (largest) stepsize used.
template <typename Scalar>
std::pair<Policy<Scalar>, Scalar> pmd_step(MirrorMap map, const StepsizeSchedule<Scalar>& schedule,
                                           const QTable<Scalar>& q, const Policy<Scalar>& policy,
                                           long k) {
  detail::require(q.rows() == policy.n_states() && q.cols() == policy.n_actions(),
                  "lookahead table shape does not match the policy");
  const Index S = policy.n_states();
  Matrix<Scalar> next(S, policy.n_actions());
  if (schedule.mode == StepsizeMode::Infinite) {
    for (Index s = 0; s < S; ++s) next.row(s) = greedy_row(q.row(s)).transpose();
    return {Policy<Scalar>(std::move(next)), std::numeric_limits<Scalar>::infinity()};
  }
  const Scalar c_k = schedule.c_at(k);
  if (schedule.scope == StepsizeScope::Uniform) {
    const Scalar eta = detail::nonzero_stepsize(
        adaptive_stepsize(map, greedy_set(q, Scalar(kDefaultGreedyTolerance)), policy, c_k));
    for (Index s = 0; s < S; ++s) next.row(s) = prox_update(map, q.row(s), policy.row(s), eta).transpose();
    return {Policy<Scalar>(std::move(next)), eta};
  }
  Scalar largest = 0;
  for (Index s = 0; s < S; ++s) {
    const Scalar eta = detail::nonzero_stepsize(state_stepsize(map, q.row(s), policy.row(s), c_k));
    largest = std::max(largest, eta);
    next.row(s) = prox_update(map, q.row(s), policy.row(s), eta).transpose();
  }
  return {Policy<Scalar>(std::move(next)), largest};
}

/// The h-PMD loop driven by an arbitrary lookahead oracle.
///
/// With a tabular `reference`, gaps against V* are recorded, together with the
/// exact-mode rate bound or, for inexact oracles, the same bound plus the
/// error-floor term.
template <typename Scalar>
std::pair<Policy<Scalar>, IterateTrace<Scalar>> run_with_oracle(const LookaheadOracle<Scalar>& oracle,
                                                                const RunConfig<Scalar>& config,
                                                                Policy<Scalar> pi0,
                                                                const TabularMdp<Scalar>* reference) {
  config.validate();
  if (config.schedule.mode == StepsizeMode::Adaptive && config.mirror == MirrorMap::NegativeEntropy) {
    detail::require(pi0.is_interior(), "KL updates need an initial policy with full support");
  }
  using Clock = std::chrono::steady_clock;
  IterateTrace<Scalar> trace;
  std::optional<VTable<Scalar>> v_star;
  std::optional<VTable<Scalar>> v_pi;
  auto gap_of = [&](const VTable<Scalar>& v) { return (*v_star - v).cwiseAbs().maxCoeff(); };
  if (reference) {
    check_compatible(*reference, pi0);
    v_star = optimal_value_exact(*reference).first;
    v_pi = policy_eval_exact(*reference, pi0);
    trace.initial_gap = gap_of(*v_pi);
  }
  const bool exact = config.mode == RunMode::Exact;
  if (!exact && reference) trace.max_estimation_error = 0;

  Policy<Scalar> policy = std::move(pi0);
  const Scalar gamma = reference ? reference->discount() : Scalar(0);
  for (long k = 0; k < config.n_iters; ++k) {
    const auto start = Clock::now();
    OracleAnswer<Scalar> answer = oracle(policy, k, v_pi ? &*v_pi : nullptr);
    if (!exact && reference && v_pi) {
      const QTable<Scalar> q_true = lookahead_from_value(*reference, *v_pi, config.h).second;
      trace.max_estimation_error =
          std::max(trace.max_estimation_error, (answer.q - q_true).cwiseAbs().maxCoeff());
    }
    auto [next, eta] = pmd_step(config.mirror, config.schedule, answer.q, policy, k);
    policy = std::move(next);

    IterationRecord<Scalar> record;
    record.iteration = k + 1;
    record.eta = eta;
    record.c_k = config.schedule.c_at(k);
    record.samples_iter = answer.samples.total();
    trace.ledger.rollout += answer.samples.rollout;
    trace.ledger.branch += answer.samples.branch;
    record.samples_cum = trace.ledger.total();
    if (reference) {
      v_pi = policy_eval_exact(*reference, policy);
      record.gap = gap_of(*v_pi);
      if (config.record_bounds) {
        const auto& c = config.schedule.c;
        if (exact) {
          record.bound = theorem1_bound(trace.initial_gap, gamma, config.h, c, k + 1);
        } else {
          const Scalar b = config.error_level.value_or(trace.max_estimation_error);
          record.bound = theorem2_bound(trace.initial_gap, gamma, config.h, c, b, k + 1);
        }
      }
    }
    if (config.timing) {
      record.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    }
    trace.records.push_back(record);
    if (config.on_iteration && !config.on_iteration(record)) break;
    if (exact && reference && config.gap_tolerance > Scalar(0) && record.gap <= config.gap_tolerance) break;
  }
  return {std::move(policy), std::move(trace)};
}

/// Exact h-PMD with Q_h^{pi_k} computed from exact policy evaluation.
template <typename Scalar>
std::pair<Policy<Scalar>, IterateTrace<Scalar>> run_exact(const TabularMdp<Scalar>& mdp,
                                                          const RunConfig<Scalar>& config,
                                                          Policy<Scalar> pi0) {
  detail::require(config.mode == RunMode::Exact, "run_exact needs exact mode");
  const int h = config.h;
  LookaheadOracle<Scalar> oracle = [&mdp, h](const Policy<Scalar>&, long, const VTable<Scalar>* v_pi) {
    return OracleAnswer<Scalar>{lookahead_from_value(mdp, *v_pi, h).second, {}};
  };
  return run_with_oracle(oracle, config, std::move(pi0), &mdp);
}

/// Inexact h-PMD: every iteration estimates Q_h at all (s, a) with the Monte
/// Carlo estimator. `reference` only feeds diagnostics; the algorithm never
/// reads it.
template <typename Scalar>
std::pair<Policy<Scalar>, IterateTrace<Scalar>> run_inexact(const GenerativeModel<Scalar>& model,
                                                            const RunConfig<Scalar>& config,
                                                            Policy<Scalar> pi0,
                                                            const TabularMdp<Scalar>* reference = nullptr) {
  detail::require(config.mode == RunMode::Inexact, "run_inexact needs inexact mode");
  config.validate();
  const auto queries = all_state_actions(model.n_states(), model.n_actions());
  EstimatorParams params = *config.estimator;
  params.rng_seed = stream_key(config.seed, {params.rng_seed});
  LookaheadOracle<Scalar> oracle = [&](const Policy<Scalar>& policy, long k, const VTable<Scalar>*) {
    const auto estimate = estimate_q_h(model, policy, queries, params, static_cast<std::uint64_t>(k));
    return OracleAnswer<Scalar>{estimate.table(model.n_states(), model.n_actions()), estimate.samples};
  };
  if (!reference) {
    if (const auto* tabular = dynamic_cast<const TabularModel<Scalar>*>(&model)) reference = &tabular->mdp();
  }
  return run_with_oracle(oracle, config, std::move(pi0), reference);
}

}  // namespace hpmd
