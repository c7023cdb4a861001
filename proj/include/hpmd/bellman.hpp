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

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/SparseLU>

#include "hpmd/mdp.hpp"

namespace hpmd {

/// Per-state sets of (near-)maximizing actions, ascending action order.
using GreedySets = std::vector<std::vector<Index>>;

inline constexpr double kDefaultGreedyTolerance = 1e-9;

namespace detail {

template <typename Scalar, typename Derived>
void check_value_shape(const TabularMdp<Scalar>& mdp, const Eigen::MatrixBase<Derived>& v) {
  require(v.cols() == 1 && v.rows() == mdp.n_states(), "value vector must have length S");
}

/// Lowest index among the maximizers of a row.
template <typename Derived>
Index argmax_lowest(const Eigen::DenseBase<Derived>& row) {
  Index best = 0;
  for (Index a = 1; a < row.size(); ++a) {
    if (row(a) > row(best)) best = a;
  }
  return best;
}

}  // namespace detail

/// (Pv)(s,a) = sum_{s'} P(s'|s,a) v(s').
template <typename Scalar, typename Derived>
QTable<Scalar> apply_P(const TabularMdp<Scalar>& mdp, const Eigen::MatrixBase<Derived>& v) {
  detail::check_value_shape(mdp, v);
  const Vector<Scalar> flat = mdp.transition() * v;
  return Eigen::Map<const QTable<Scalar>>(flat.data(), mdp.n_states(), mdp.n_actions());
}

/// r + gamma * P v, the one-step action values of a state value vector.
template <typename Scalar, typename Derived>
QTable<Scalar> backup(const TabularMdp<Scalar>& mdp, const Eigen::MatrixBase<Derived>& v) {
  return mdp.reward() + mdp.discount() * apply_P(mdp, v);
}

/// Expected Bellman operator T^pi v = r^pi + gamma P^pi v.
template <typename Scalar, typename Derived>
VTable<Scalar> bellman_expected(const TabularMdp<Scalar>& mdp, const Policy<Scalar>& policy,
                                const Eigen::MatrixBase<Derived>& v) {
  check_compatible(mdp, policy);
  return policy.probs().cwiseProduct(backup(mdp, v)).rowwise().sum();
}

/// Bellman optimality operator T v = max_a [r + gamma P v].
template <typename Scalar, typename Derived>
VTable<Scalar> bellman_optimal(const TabularMdp<Scalar>& mdp, const Eigen::MatrixBase<Derived>& v) {
  return backup(mdp, v).rowwise().maxCoeff();
}

/// Deterministic policy picking the lowest-index maximizer of each row of q.
template <typename Scalar>
Policy<Scalar> greedy_policy(const QTable<Scalar>& q) {
  std::vector<Index> actions(static_cast<std::size_t>(q.rows()));
  for (Index s = 0; s < q.rows(); ++s) actions[static_cast<std::size_t>(s)] = detail::argmax_lowest(q.row(s));
  return Policy<Scalar>::deterministic(actions, q.cols());
}

/// {a : q(s,a) >= max_a' q(s,a') - tol} for every state.
template <typename Scalar>
GreedySets greedy_set(const QTable<Scalar>& q, Scalar tol = Scalar(kDefaultGreedyTolerance)) {
  detail::require(tol >= Scalar(0), "greedy tolerance must be nonnegative");
  GreedySets sets(static_cast<std::size_t>(q.rows()));
  for (Index s = 0; s < q.rows(); ++s) {
    const Scalar best = q.row(s).maxCoeff();
    for (Index a = 0; a < q.cols(); ++a) {
      if (q(s, a) >= best - tol) sets[static_cast<std::size_t>(s)].push_back(a);
    }
  }
  return sets;
}

enum class EvalMethod { Direct, Iterative };

struct EvalOptions {
  EvalMethod method = EvalMethod::Direct;
  /// Required sup-norm Bellman residual of the returned value.
  double residual_tol = 1e-10;
  /// Cap for the iterative method.
  long max_iterations = 1'000'000;
};

/// Sparse P^pi with rows sum_a pi(a|s) P(.|s,a).
template <typename Scalar>
SparseMatrix<Scalar> policy_kernel(const TabularMdp<Scalar>& mdp, const Policy<Scalar>& policy) {
  check_compatible(mdp, policy);
  std::vector<Eigen::Triplet<Scalar>> triplets;
  triplets.reserve(static_cast<std::size_t>(mdp.transition().nonZeros()));
  const auto& P = mdp.transition();
  for (Index s = 0; s < mdp.n_states(); ++s) {
    for (Index a = 0; a < mdp.n_actions(); ++a) {
      const Scalar weight = policy(s, a);
      if (weight == Scalar(0)) continue;
      for (typename SparseMatrix<Scalar>::InnerIterator it(P, mdp.row_index(s, a)); it; ++it) {
        triplets.emplace_back(s, it.col(), weight * it.value());
      }
    }
  }
  SparseMatrix<Scalar> kernel(mdp.n_states(), mdp.n_states());
  kernel.setFromTriplets(triplets.begin(), triplets.end());
  return kernel;
}

/// V^pi, the unique solution of (I - gamma P^pi) V = r^pi.
///
/// The direct method factorizes the sparse system with SparseLU and applies
/// iterative refinement until the Bellman residual meets `residual_tol`.
/// Throws NumericalError if that cannot be reached.
template <typename Scalar>
VTable<Scalar> policy_eval_exact(const TabularMdp<Scalar>& mdp, const Policy<Scalar>& policy,
                                 const EvalOptions& options = {}) {
  check_compatible(mdp, policy);
  const Scalar gamma = mdp.discount();
  const Scalar tol = std::max(static_cast<Scalar>(options.residual_tol),
                              Scalar(1e3) * std::numeric_limits<Scalar>::epsilon() /
                                  (Scalar(1) - gamma));
  const VTable<Scalar> r_pi = policy.probs().cwiseProduct(mdp.reward()).rowwise().sum();
  const SparseMatrix<Scalar> kernel = policy_kernel(mdp, policy);

  auto residual_of = [&](const VTable<Scalar>& v) -> VTable<Scalar> {
    return r_pi + gamma * (kernel * v) - v;
  };

  if (options.method == EvalMethod::Iterative) {
    VTable<Scalar> v = VTable<Scalar>::Zero(mdp.n_states());
    for (long it = 0; it < options.max_iterations; ++it) {
      const VTable<Scalar> next = r_pi + gamma * (kernel * v);
      // ||T v - v|| <= tol(1-gamma) ensures the same residual bound for the returned T v.
      const Scalar step = (next - v).cwiseAbs().maxCoeff();
      v = next;
      if (step * gamma <= tol) return v;
    }
    throw NumericalError("iterative policy evaluation did not converge");
  }

  using ColMajorSparse = Eigen::SparseMatrix<Scalar, Eigen::ColMajor>;
  ColMajorSparse system(mdp.n_states(), mdp.n_states());
  system.setIdentity();
  system -= gamma * ColMajorSparse(kernel);
  system.makeCompressed();
  Eigen::SparseLU<ColMajorSparse, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(system);
  if (lu.info() != Eigen::Success) throw NumericalError("policy evaluation: factorization failed");
  VTable<Scalar> v = lu.solve(r_pi);
  if (lu.info() != Eigen::Success) throw NumericalError("policy evaluation: solve failed");
  for (int refine = 0; refine < 4; ++refine) {
    const VTable<Scalar> residual = residual_of(v);
    if (residual.cwiseAbs().maxCoeff() <= tol) return v;
    v += lu.solve(residual);
  }
  if (residual_of(v).cwiseAbs().maxCoeff() <= tol) return v;
  throw NumericalError("policy evaluation: residual above tolerance after refinement");
}

/// Value iteration from V = 0 until ||T V - V|| <= tol (1-gamma)/gamma, so the
/// returned V is within `tol` of V* in sup norm; paired with the greedy policy.
template <typename Scalar>
std::pair<VTable<Scalar>, Policy<Scalar>> optimal_value(const TabularMdp<Scalar>& mdp, Scalar tol) {
  detail::require(tol > Scalar(0), "tolerance must be positive");
  const Scalar gamma = mdp.discount();
  const Scalar stop = tol * (Scalar(1) - gamma) / gamma;
  const long cap =
      static_cast<long>(std::ceil(std::log(tol * (Scalar(1) - gamma)) / std::log(gamma))) + 100;
  VTable<Scalar> v = VTable<Scalar>::Zero(mdp.n_states());
  for (long it = 0; it <= cap; ++it) {
    QTable<Scalar> q = backup(mdp, v);
    VTable<Scalar> next = q.rowwise().maxCoeff();
    const Scalar change = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (change <= stop) {
      return {v, greedy_policy<Scalar>(backup(mdp, v))};
    }
  }
  throw NumericalError("value iteration did not converge within the iteration cap");
}

/// V* of an optimal deterministic policy, refined by policy iteration from the
/// value-iteration greedy policy so the result is exact up to solver precision.
template <typename Scalar>
std::pair<VTable<Scalar>, Policy<Scalar>> optimal_value_exact(const TabularMdp<Scalar>& mdp,
                                                              Scalar tol = Scalar(1e-10)) {
  auto [v_vi, policy] = optimal_value(mdp, tol);
  VTable<Scalar> v = policy_eval_exact(mdp, policy);
  for (Index it = 0; it < mdp.n_states() * mdp.n_actions() + 1; ++it) {
    const QTable<Scalar> q = backup(mdp, v);
    std::vector<Index> actions(static_cast<std::size_t>(mdp.n_states()));
    bool changed = false;
    for (Index s = 0; s < mdp.n_states(); ++s) {
      Index current = 0;
      while (policy(s, current) != Scalar(1)) ++current;
      const Index best = detail::argmax_lowest(q.row(s));
      // Switch only on a strict improvement so the loop cannot cycle on ties.
      const Scalar margin = Scalar(16) * std::numeric_limits<Scalar>::epsilon() *
                            std::max(Scalar(1), std::abs(q(s, best)));
      if (q(s, best) > q(s, current) + margin) {
        actions[static_cast<std::size_t>(s)] = best;
        changed = true;
      } else {
        actions[static_cast<std::size_t>(s)] = current;
      }
    }
    if (!changed) return {v, policy};
    policy = Policy<Scalar>::deterministic(actions, mdp.n_actions());
    v = policy_eval_exact(mdp, policy);
  }
  throw NumericalError("policy iteration polish did not terminate");
}

/// V_h^pi = T^{h-1} v_pi and Q_h^pi = r + gamma P V_h^pi, from a known V^pi.
template <typename Scalar>
std::pair<VTable<Scalar>, QTable<Scalar>> lookahead_from_value(const TabularMdp<Scalar>& mdp,
                                                               VTable<Scalar> v_pi, int h) {
  detail::require(h >= 1, "lookahead depth h must be at least 1");
  detail::check_value_shape(mdp, v_pi);
  for (int step = 1; step < h; ++step) v_pi = bellman_optimal(mdp, v_pi);
  QTable<Scalar> q = backup(mdp, v_pi);
  return {std::move(v_pi), std::move(q)};
}

/// (V_h^pi, Q_h^pi) for lookahead depth h >= 1.
template <typename Scalar>
std::pair<VTable<Scalar>, QTable<Scalar>> lookahead_values(const TabularMdp<Scalar>& mdp,
                                                           const Policy<Scalar>& policy, int h) {
  detail::require(h >= 1, "lookahead depth h must be at least 1");
  return lookahead_from_value(mdp, policy_eval_exact(mdp, policy), h);
}

}  // namespace hpmd
