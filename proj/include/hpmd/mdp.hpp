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
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hpmd/types.hpp"

namespace hpmd {

/// Tolerance used when checking that a row is a probability distribution.
/// 1e-12 in double precision, widened for lower-precision scalars.
template <typename Scalar>
constexpr Scalar stochastic_tolerance() {
  return std::max(Scalar(1e-12), Scalar(64) * std::numeric_limits<Scalar>::epsilon());
}

namespace detail {

template <typename Derived>
bool is_distribution(const Eigen::DenseBase<Derived>& row) {
  using Scalar = typename Derived::Scalar;
  if (row.size() == 0) return false;
  for (Index i = 0; i < row.size(); ++i) {
    if (!(row(i) >= Scalar(0)) || !std::isfinite(row(i))) return false;
  }
  return std::abs(row.sum() - Scalar(1)) <= stochastic_tolerance<Scalar>();
}

}  // namespace detail

/// Finite discounted MDP with rewards in [0,1].
///
/// The kernel is stored as an (S*A) x S row-major sparse matrix whose row
/// `s*A + a` holds P(.|s,a). This is the operator P : R^S -> R^{SA} acting on
/// value vectors, so `transition() * v` is (Pv) flattened state-major.
template <typename Scalar = double>
class TabularMdp {
 public:
  TabularMdp() = default;

  TabularMdp(Index n_states, Index n_actions, SparseMatrix<Scalar> transition,
             Matrix<Scalar> reward, Scalar discount, Vector<Scalar> initial_dist)
      : n_states_(n_states),
        n_actions_(n_actions),
        transition_(std::move(transition)),
        reward_(std::move(reward)),
        discount_(discount),
        initial_dist_(std::move(initial_dist)) {
    transition_.makeCompressed();
    validate();
  }

  /// Builds from a dense (S*A) x S kernel; exact zeros are dropped.
  static TabularMdp from_dense(const Matrix<Scalar>& transition, const Matrix<Scalar>& reward,
                               Scalar discount, const Vector<Scalar>& initial_dist) {
    const Index S = transition.cols();
    detail::require(S > 0 && transition.rows() % S == 0,
                    "transition must have shape (S*A) x S");
    const Index A = transition.rows() / S;
    SparseMatrix<Scalar> sparse = transition.sparseView(Scalar(0), Scalar(0));
    return TabularMdp(S, A, std::move(sparse), reward, discount, initial_dist);
  }

  Index n_states() const { return n_states_; }
  Index n_actions() const { return n_actions_; }
  Scalar discount() const { return discount_; }
  const SparseMatrix<Scalar>& transition() const { return transition_; }
  const Matrix<Scalar>& reward() const { return reward_; }
  const Vector<Scalar>& initial_dist() const { return initial_dist_; }

  Index row_index(Index s, Index a) const { return s * n_actions_ + a; }

  Scalar reward(Index s, Index a) const { return reward_(s, a); }

  Scalar probability(Index s, Index a, Index next) const {
    return transition_.coeff(row_index(s, a), next);
  }

  /// Largest value any policy can attain: 1/(1-gamma).
  Scalar value_upper_bound() const { return Scalar(1) / (Scalar(1) - discount_); }

  Matrix<Scalar> dense_transition() const { return Matrix<Scalar>(transition_); }

 private:
  void validate() const {
    detail::require(n_states_ > 0, "n_states must be positive");
    detail::require(n_actions_ > 0, "n_actions must be positive");
    detail::require(transition_.rows() == n_states_ * n_actions_ &&
                        transition_.cols() == n_states_,
                    "transition must have shape (S*A) x S");
    detail::require(reward_.rows() == n_states_ && reward_.cols() == n_actions_,
                    "reward must have shape S x A");
    detail::require(initial_dist_.size() == n_states_, "initial_dist must have length S");
    detail::require(discount_ > Scalar(0) && discount_ < Scalar(1),
                    "discount must lie strictly inside (0,1)");
    for (Index row = 0; row < transition_.outerSize(); ++row) {
      Scalar total = 0;
      for (typename SparseMatrix<Scalar>::InnerIterator it(transition_, row); it; ++it) {
        detail::require(it.value() >= Scalar(0) && std::isfinite(it.value()),
                        "transition probabilities must be finite and nonnegative");
        total += it.value();
      }
      if (std::abs(total - Scalar(1)) > stochastic_tolerance<Scalar>()) {
        throw InvalidArgument("transition row (s=" + std::to_string(row / n_actions_) +
                              ", a=" + std::to_string(row % n_actions_) +
                              ") does not sum to 1");
      }
    }
    for (Index s = 0; s < n_states_; ++s) {
      for (Index a = 0; a < n_actions_; ++a) {
        const Scalar r = reward_(s, a);
        detail::require(r >= Scalar(0) && r <= Scalar(1), "rewards must lie in [0,1]");
      }
    }
    detail::require(detail::is_distribution(initial_dist_),
                    "initial_dist must be a probability vector");
  }

  Index n_states_ = 0;
  Index n_actions_ = 0;
  SparseMatrix<Scalar> transition_;
  Matrix<Scalar> reward_;
  Scalar discount_ = Scalar(0.5);
  Vector<Scalar> initial_dist_;
};

/// Randomized stationary policy: row s is the distribution pi(.|s).
template <typename Scalar = double>
class Policy {
 public:
  Policy() = default;

  explicit Policy(Matrix<Scalar> probs) : probs_(std::move(probs)) {
    detail::require(probs_.rows() > 0 && probs_.cols() > 0, "policy must be non-empty");
    for (Index s = 0; s < probs_.rows(); ++s) {
      if (!detail::is_distribution(probs_.row(s))) {
        throw InvalidArgument("policy row " + std::to_string(s) + " is not a distribution");
      }
    }
  }

  static Policy uniform(Index n_states, Index n_actions) {
    return Policy(Matrix<Scalar>::Constant(n_states, n_actions, Scalar(1) / Scalar(n_actions)));
  }

  static Policy deterministic(std::span<const Index> actions, Index n_actions) {
    Matrix<Scalar> probs = Matrix<Scalar>::Zero(static_cast<Index>(actions.size()), n_actions);
    for (std::size_t s = 0; s < actions.size(); ++s) {
      detail::require(actions[s] >= 0 && actions[s] < n_actions, "action out of range");
      probs(static_cast<Index>(s), actions[s]) = Scalar(1);
    }
    return Policy(std::move(probs));
  }

  Index n_states() const { return probs_.rows(); }
  Index n_actions() const { return probs_.cols(); }
  const Matrix<Scalar>& probs() const { return probs_; }
  auto row(Index s) const { return probs_.row(s); }
  Scalar operator()(Index s, Index a) const { return probs_(s, a); }

  /// True iff every entry is strictly positive (pi lies in relint of the policy set).
  bool is_interior() const { return (probs_.array() > Scalar(0)).all(); }

  bool operator==(const Policy& other) const { return probs_ == other.probs_; }

 private:
  Matrix<Scalar> probs_;
};

template <typename Scalar>
void check_compatible(const TabularMdp<Scalar>& mdp, const Policy<Scalar>& policy) {
  detail::require(policy.n_states() == mdp.n_states() && policy.n_actions() == mdp.n_actions(),
                  "policy shape does not match the MDP");
}

}  // namespace hpmd
