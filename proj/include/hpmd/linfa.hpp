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
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "hpmd/engine.hpp"

namespace hpmd {

/// Linear features psi(s, a) in R^d stored as the (S*A) x d matrix Psi, row
/// s*A + a. Construction rejects rank-deficient Psi.
template <typename Scalar = double>
class FeatureMap {
 public:
  FeatureMap(Index n_states, Index n_actions, Matrix<Scalar> psi)
      : n_states_(n_states), n_actions_(n_actions), psi_(std::move(psi)) {
    detail::require(n_states >= 1 && n_actions >= 1, "need at least one state and action");
    detail::require(psi_.rows() == n_states * n_actions, "feature matrix must have S*A rows");
    detail::require(psi_.cols() >= 1, "feature dimension must be at least 1");
    detail::require(psi_.allFinite(), "features must be finite");
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(psi_);
    detail::require(qr.rank() == psi_.cols(), "feature matrix is not full column rank");
  }

  // Copies start with a fresh evaluation count.
  FeatureMap(const FeatureMap& other)
      : n_states_(other.n_states_), n_actions_(other.n_actions_), psi_(other.psi_) {}
  FeatureMap(FeatureMap&& other) noexcept
      : n_states_(other.n_states_), n_actions_(other.n_actions_), psi_(std::move(other.psi_)) {}
  FeatureMap& operator=(const FeatureMap&) = delete;

  Index n_states() const { return n_states_; }
  Index n_actions() const { return n_actions_; }
  Index dim() const { return psi_.cols(); }
  const Matrix<Scalar>& matrix() const { return psi_; }

  /// psi(s, a) as a row of Psi.
  auto eval(Index s, Index a) const {
    evaluations_.fetch_add(1, std::memory_order_relaxed);
    return psi_.row(s * n_actions_ + a);
  }

  /// (Psi theta)(s, .) for all actions.
  template <typename Derived>
  Vector<Scalar> q_row(Index s, const Eigen::MatrixBase<Derived>& theta) const {
    evaluations_.fetch_add(n_actions_, std::memory_order_relaxed);
    return psi_.middleRows(s * n_actions_, n_actions_) * theta;
  }

  /// Psi theta reshaped to S x A.
  template <typename Derived>
  QTable<Scalar> q_table(const Eigen::MatrixBase<Derived>& theta) const {
    const Vector<Scalar> flat = psi_ * theta;
    return Eigen::Map<const QTable<Scalar>>(flat.data(), n_states_, n_actions_);
  }

  /// Number of feature vectors read so far.
  long long evaluations() const { return evaluations_.load(); }

 private:
  Index n_states_ = 0;
  Index n_actions_ = 0;
  Matrix<Scalar> psi_;
  mutable std::atomic<long long> evaluations_{0};
};

/// Indicator features, d = S*A.
template <typename Scalar = double>
FeatureMap<Scalar> one_hot_features(Index n_states, Index n_actions) {
  return FeatureMap<Scalar>(n_states, n_actions,
                            Matrix<Scalar>::Identity(n_states * n_actions, n_states * n_actions));
}

/// Weighted core set for least squares: points, weights rho, and the Gram
/// matrix G = sum rho(z) psi(z) psi(z)^T with its inverse.
template <typename Scalar = double>
struct DesignSet {
  std::vector<StateAction> core;
  Vector<Scalar> weights;
  Matrix<Scalar> core_features;
  Matrix<Scalar> gram;
  Matrix<Scalar> gram_inv;
  /// max over candidates of ||psi(z)||_{G^{-1}}.
  Scalar max_norm = 0;
  /// Slack actually met: max_norm <= sqrt(d) (1 + eps_achieved).
  Scalar eps_achieved = 0;

  Index dim() const { return gram.rows(); }
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> weighted_gram(const Matrix<Scalar>& z, const Vector<Scalar>& w) {
  return z.transpose() * w.asDiagonal() * z;
}

template <typename Scalar>
Matrix<Scalar> spd_inverse(const Matrix<Scalar>& g) {
  Eigen::LDLT<Matrix<Scalar>> ldlt(g);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericalError("design Gram matrix is not positive definite");
  return ldlt.solve(Matrix<Scalar>::Identity(g.rows(), g.cols()));
}

/// g(z) = psi(z)^T G^{-1} psi(z) for every candidate row.
template <typename Scalar>
Vector<Scalar> leverages(const Matrix<Scalar>& z, const Matrix<Scalar>& g_inv) {
  return (z * g_inv).cwiseProduct(z).rowwise().sum();
}

/// Frank-Wolfe (Fedorov-Wynn) ascent on log det G(rho) with away steps, until
/// max_z g(z) <= d (1 + eps)^2.
template <typename Scalar>
Vector<Scalar> frank_wolfe_design(const Matrix<Scalar>& z, Scalar eps, long max_iters) {
  const Index n = z.rows();
  const Scalar d = static_cast<Scalar>(z.cols());
  const Scalar target = d * (Scalar(1) + eps) * (Scalar(1) + eps);
  Vector<Scalar> rho = Vector<Scalar>::Constant(n, Scalar(1) / Scalar(n));
  Matrix<Scalar> g_inv = spd_inverse(weighted_gram(z, rho));
  Vector<Scalar> g = leverages(z, g_inv);
  for (long it = 0; it < max_iters; ++it) {
    if (it % 64 == 63) {
      g_inv = spd_inverse(weighted_gram(z, rho));
      g = leverages(z, g_inv);
    }
    Index up = 0;
    const Scalar g_max = g.maxCoeff(&up);
    if (g_max <= target) return rho;
    Index down = -1;
    for (Index i = 0; i < n; ++i)
      if (rho(i) > Scalar(0) && (down < 0 || g(i) < g(down))) down = i;

    Index j = up;
    Scalar lambda = (g_max - d) / (d * (g_max - Scalar(1)));
    if (down >= 0 && d - g(down) > g_max - d && rho(down) < Scalar(1)) {
      j = down;
      const Scalar floor = -rho(down) / (Scalar(1) - rho(down));
      lambda = g(down) <= Scalar(1) ? floor
                                    : std::max(floor, (g(down) - d) / (d * (g(down) - Scalar(1))));
    }
    // G' = (1-l) G + l psi psi^T; Sherman-Morrison on G^{-1} and on g.
    const Vector<Scalar> u = g_inv * z.row(j).transpose();
    const Scalar denom = (Scalar(1) - lambda) + lambda * g(j);
    if (!(denom > Scalar(0))) {
      g_inv = spd_inverse(weighted_gram(z, rho));
      g = leverages(z, g_inv);
      continue;
    }
    const Vector<Scalar> zu = z * u;
    g = (g - (lambda / denom) * zu.cwiseAbs2()) / (Scalar(1) - lambda);
    g_inv = (g_inv - (lambda / denom) * u * u.transpose()) / (Scalar(1) - lambda);
    rho *= (Scalar(1) - lambda);
    rho(j) += lambda;
    if (rho(j) < Scalar(0)) rho(j) = Scalar(0);
  }
  throw NumericalError("design iteration did not converge within the iteration cap");
}

}  // namespace detail

/// Kiefer-Wolfowitz style design over the candidate pairs: at most d(d+1)/2
/// support points and max_z ||psi(z)||_{G^{-1}} <= sqrt(d) (1 + eps_kw).
///
/// Tiny weights are pruned and the support is truncated to the d(d+1)/2
/// largest before the condition is re-checked on all candidates. If the check
/// fails the ascent is rerun tighter, and as a last resort eps_kw is relaxed
/// by factors of 2 up to 0.1; `eps_achieved` reports what was met.
template <typename Scalar>
DesignSet<Scalar> compute_design(const FeatureMap<Scalar>& features, std::vector<StateAction> candidates,
                                 Scalar eps_kw = Scalar(0.01), long max_iters = 200'000) {
  detail::require(eps_kw > Scalar(0), "eps_kw must be positive");
  detail::require(!candidates.empty(), "need at least one candidate");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const Index n = static_cast<Index>(candidates.size());
  const Index d = features.dim();
  Matrix<Scalar> z(n, d);
  for (Index i = 0; i < n; ++i) {
    const auto& c = candidates[static_cast<std::size_t>(i)];
    detail::require(c.state >= 0 && c.state < features.n_states() && c.action >= 0 &&
                        c.action < features.n_actions(),
                    "candidate out of range");
    z.row(i) = features.matrix().row(c.state * features.n_actions() + c.action);
  }
  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(z);
  detail::require(qr.rank() == d, "candidate features do not span the feature space");

  const std::size_t max_support = static_cast<std::size_t>(d * (d + 1) / 2);
  const Scalar root_d = std::sqrt(Scalar(d));
  for (Scalar eps = eps_kw; eps <= std::max(eps_kw, Scalar(0.1)) * Scalar(1.0000001); eps *= Scalar(2)) {
    Scalar inner = eps;
    for (int attempt = 0; attempt < 4; ++attempt, inner /= Scalar(4)) {
      Vector<Scalar> rho = detail::frank_wolfe_design(z, inner, max_iters);
      std::vector<Index> support;
      for (Index i = 0; i < n; ++i)
        if (rho(i) >= Scalar(1e-8)) support.push_back(i);
      std::stable_sort(support.begin(), support.end(), [&](Index a, Index b) { return rho(a) > rho(b); });
      if (support.size() > max_support) support.resize(max_support);
      std::sort(support.begin(), support.end());

      DesignSet<Scalar> design;
      design.weights.resize(static_cast<Index>(support.size()));
      design.core_features.resize(static_cast<Index>(support.size()), d);
      for (std::size_t i = 0; i < support.size(); ++i) {
        design.core.push_back(candidates[static_cast<std::size_t>(support[i])]);
        design.weights(static_cast<Index>(i)) = rho(support[i]);
        design.core_features.row(static_cast<Index>(i)) = z.row(support[i]);
      }
      design.weights /= design.weights.sum();
      design.gram = detail::weighted_gram(design.core_features, design.weights);
      try {
        design.gram_inv = detail::spd_inverse(design.gram);
      } catch (const NumericalError&) {
        continue;
      }
      design.max_norm = std::sqrt(detail::leverages(z, design.gram_inv).maxCoeff());
      design.eps_achieved = std::max(Scalar(0), design.max_norm / root_d - Scalar(1));
      if (design.max_norm <= root_d * (Scalar(1) + eps)) return design;
    }
  }
  throw NumericalError("could not certify a design within the relaxed tolerance");
}

/// theta = G^{-1} sum_z rho(z) R(z) psi(z), targets aligned with design.core.
template <typename Scalar, typename Derived>
Vector<Scalar> fit_theta(const DesignSet<Scalar>& design, const Eigen::MatrixBase<Derived>& targets) {
  detail::require(targets.size() == static_cast<Index>(design.core.size()),
                  "need one target per core point");
  const Vector<Scalar> weighted = design.weights.cwiseProduct(targets);
  return design.gram_inv * (design.core_features.transpose() * weighted);
}

template <typename Scalar>
Vector<Scalar> fit_theta(const DesignSet<Scalar>& design, const std::map<StateAction, Scalar>& targets) {
  Vector<Scalar> aligned(static_cast<Index>(design.core.size()));
  for (std::size_t i = 0; i < design.core.size(); ++i) {
    const auto it = targets.find(design.core[i]);
    detail::require(it != targets.end(), "missing target for a core point");
    aligned(static_cast<Index>(i)) = it->second;
  }
  return fit_theta(design, aligned);
}

/// Approximate minimax linear fit min_theta ||q - Psi theta||_inf by Lawson's
/// iteratively reweighted least squares. Returns the best sup error found,
/// which upper-bounds the true minimum.
template <typename Scalar>
Scalar minimax_fit_error(const Matrix<Scalar>& psi, const Vector<Scalar>& q, int iterations = 500) {
  detail::require(psi.rows() == q.size(), "fit target has the wrong length");
  const Index n = psi.rows();
  Vector<Scalar> w = Vector<Scalar>::Constant(n, Scalar(1) / Scalar(n));
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (int it = 0; it < iterations; ++it) {
    const Vector<Scalar> sw = w.cwiseSqrt();
    const Vector<Scalar> theta =
        (sw.asDiagonal() * psi).colPivHouseholderQr().solve(sw.cwiseProduct(q));
    const Vector<Scalar> residual = (q - psi * theta).cwiseAbs();
    best = std::min(best, residual.maxCoeff());
    const Scalar mass = w.dot(residual);
    if (!(mass > Scalar(0))) break;
    w = w.cwiseProduct(residual) / mass;
    // Keep every point slightly active so the weighted system stays full rank.
    w = (w.array() + Scalar(1e-12)).matrix();
    w /= w.sum();
  }
  return best;
}

/// Stored parameters of an FA run; policies are rebuilt from them on demand.
template <typename Scalar = double>
struct FaRunState {
  std::vector<Vector<Scalar>> theta_list;
  Policy<Scalar> pi0;
  MirrorMap mirror = MirrorMap::NegativeEntropy;
  StepsizeSchedule<Scalar> schedule;

  FaRunState(Policy<Scalar> initial, MirrorMap map, StepsizeSchedule<Scalar> sched)
      : pi0(std::move(initial)), mirror(map), schedule(std::move(sched)) {}

  std::size_t memo_size() const {
    std::lock_guard lock(*mutex_);
    return memo_.size();
  }
  void clear_memo() {
    std::lock_guard lock(*mutex_);
    memo_.clear();
  }

 private:
  struct Key {
    long k;
    Index s;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& key) const {
      return static_cast<std::size_t>(mix64(static_cast<std::uint64_t>(key.k) * 0x9e3779b97f4a7c15ULL ^
                                            static_cast<std::uint64_t>(key.s)));
    }
  };
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
  std::unordered_map<Key, Vector<Scalar>, KeyHash> memo_;

  template <typename S>
  friend const Vector<S>& policy_row_on_demand(FaRunState<S>&, long, Index, const FeatureMap<S>&);
};

/// pi_k(.|s) rebuilt from pi_0 and theta_0..theta_{k-1}: at each step the
/// uniform-over-argmax row of Psi theta_{j-1} sets the stepsize
/// eta = D(greedy, pi_{j-1}(.|s)) / c_{j-1}, followed by the proximal update.
/// Every row produced is memoized under (j, s).
template <typename Scalar>
const Vector<Scalar>& policy_row_on_demand(FaRunState<Scalar>& state, long k, Index s,
                                           const FeatureMap<Scalar>& features) {
  detail::require(k >= 0 && k <= static_cast<long>(state.theta_list.size()),
                  "policy index beyond the stored parameters");
  detail::require(s >= 0 && s < state.pi0.n_states(), "state out of range");
  using Key = typename FaRunState<Scalar>::Key;
  std::lock_guard lock(*state.mutex_);
  if (auto it = state.memo_.find(Key{k, s}); it != state.memo_.end()) return it->second;
  long j = k;
  while (j > 0 && !state.memo_.contains(Key{j, s})) --j;
  if (j == 0 && !state.memo_.contains(Key{0, s})) {
    state.memo_.emplace(Key{0, s}, Vector<Scalar>(state.pi0.row(s).transpose()));
  }
  for (; j < k; ++j) {
    const Vector<Scalar>& old_row = state.memo_.at(Key{j, s});
    const Vector<Scalar> q = features.q_row(s, state.theta_list[static_cast<std::size_t>(j)]);
    Vector<Scalar> next;
    if (state.schedule.mode == StepsizeMode::Infinite) {
      next = greedy_row(q);
    } else {
      const Scalar eta =
          detail::nonzero_stepsize(state_stepsize(state.mirror, q, old_row, state.schedule.c_at(j)));
      next = prox_update(state.mirror, q, old_row, eta);
    }
    state.memo_.emplace(Key{j + 1, s}, std::move(next));
  }
  return state.memo_.at(Key{k, s});
}

/// pi_k as a PolicySource for the estimator.
template <typename Scalar>
struct OnDemandPolicy {
  FaRunState<Scalar>* state;
  const FeatureMap<Scalar>* features;
  long k;
  const Vector<Scalar>& row(Index s) const { return policy_row_on_demand(*state, k, s, *features); }
};

/// Every row of pi_k, rebuilt on demand.
template <typename Scalar>
Policy<Scalar> materialize_policy(FaRunState<Scalar>& state, long k, const FeatureMap<Scalar>& features) {
  Matrix<Scalar> probs(state.pi0.n_states(), state.pi0.n_actions());
  for (Index s = 0; s < probs.rows(); ++s)
    probs.row(s) = policy_row_on_demand(state, k, s, features).transpose();
  return Policy<Scalar>(std::move(probs));
}

template <typename Scalar = double>
struct FaDiagnostics {
  /// Upper estimate of min_theta ||Q_h^{pi_k} - Psi theta||_inf.
  Scalar eps_pi = std::numeric_limits<Scalar>::quiet_NaN();
  /// max over core points of |Q_hat - Q_h^{pi_k}|.
  Scalar eps_q = std::numeric_limits<Scalar>::quiet_NaN();
  /// eps_pi (1 + sqrt d) + eps_q sqrt d.
  Scalar extrapolation_bound = std::numeric_limits<Scalar>::quiet_NaN();
  /// Measured ||Q_h^{pi_k} - Psi theta_k||_inf.
  Scalar extrapolation_error = std::numeric_limits<Scalar>::quiet_NaN();
};

template <typename Scalar = double>
struct FaTrace {
  IterateTrace<Scalar> trace;
  std::vector<FaDiagnostics<Scalar>> diagnostics;
};

/// h-PMD with linear lookahead values. Each iteration estimates Q_h of the
/// current (implicit) policy on the design core only, fits theta_k and appends
/// it. With a tabular `reference`, policies are materialized for gaps and the
/// fit is checked against exact lookahead values; the recorded bound is the
/// inexact rate bound with b the largest extrapolation bound seen so far.
template <typename Scalar>
std::pair<FaRunState<Scalar>, FaTrace<Scalar>> run_fa(const GenerativeModel<Scalar>& model,
                                                       const FeatureMap<Scalar>& features,
                                                       const DesignSet<Scalar>& design,
                                                       const RunConfig<Scalar>& config, Policy<Scalar> pi0,
                                                       const TabularMdp<Scalar>* reference = nullptr,
                                                       bool measure_eps_pi = true) {
  detail::require(config.mode == RunMode::Inexact, "run_fa needs inexact mode");
  config.validate();
  detail::require(features.n_states() == model.n_states() && features.n_actions() == model.n_actions(),
                  "features do not match the model");
  detail::require(design.dim() == features.dim(), "design and feature dimensions differ");
  detail::require(pi0.n_states() == model.n_states() && pi0.n_actions() == model.n_actions(),
                  "initial policy does not match the model");
  if (config.schedule.mode == StepsizeMode::Adaptive && config.mirror == MirrorMap::NegativeEntropy)
    detail::require(pi0.is_interior(), "KL updates need an initial policy with full support");
  if (!reference) {
    if (const auto* tabular = dynamic_cast<const TabularModel<Scalar>*>(&model)) reference = &tabular->mdp();
  }

  using Clock = std::chrono::steady_clock;
  FaRunState<Scalar> state(pi0, config.mirror, config.schedule);
  FaTrace<Scalar> out;
  EstimatorParams params = *config.estimator;
  params.rng_seed = stream_key(config.seed, {params.rng_seed});
  const int d = static_cast<int>(features.dim());

  std::optional<VTable<Scalar>> v_star;
  std::optional<VTable<Scalar>> v_pi;
  if (reference) {
    v_star = optimal_value_exact(*reference).first;
    v_pi = policy_eval_exact(*reference, pi0);
    out.trace.initial_gap = (*v_star - *v_pi).cwiseAbs().maxCoeff();
  }
  Scalar worst_bound = 0;
  for (long k = 0; k < config.n_iters; ++k) {
    const auto start = Clock::now();
    OnDemandPolicy<Scalar> current{&state, &features, k};
    const auto estimate = estimate_q_h(model, current, design.core, params, static_cast<std::uint64_t>(k));
    Vector<Scalar> targets(static_cast<Index>(design.core.size()));
    for (std::size_t i = 0; i < design.core.size(); ++i)
      targets(static_cast<Index>(i)) = estimate.q_hat.at(design.core[i]);
    state.theta_list.push_back(fit_theta(design, targets));

    IterationRecord<Scalar> record;
    record.iteration = k + 1;
    record.c_k = config.schedule.c_at(k);
    record.samples_iter = estimate.samples.total();
    out.trace.ledger.rollout += estimate.samples.rollout;
    out.trace.ledger.branch += estimate.samples.branch;
    record.samples_cum = out.trace.ledger.total();

    FaDiagnostics<Scalar> diag;
    if (reference) {
      const QTable<Scalar> q_true = lookahead_from_value(*reference, *v_pi, config.h).second;
      const QTable<Scalar> q_fit = features.q_table(state.theta_list.back());
      diag.extrapolation_error = (q_true - q_fit).cwiseAbs().maxCoeff();
      Scalar eps_q = 0;
      for (std::size_t i = 0; i < design.core.size(); ++i) {
        const auto& z = design.core[i];
        eps_q = std::max(eps_q, std::abs(targets(static_cast<Index>(i)) - q_true(z.state, z.action)));
      }
      diag.eps_q = eps_q;
      if (measure_eps_pi) {
        const Vector<Scalar> flat = Eigen::Map<const Vector<Scalar>>(q_true.data(), q_true.size());
        diag.eps_pi = std::min(minimax_fit_error(features.matrix(), flat), diag.extrapolation_error);
        diag.extrapolation_bound = static_cast<Scalar>(extrapolation_bound(diag.eps_pi, diag.eps_q, d));
        worst_bound = std::max(worst_bound, diag.extrapolation_bound);
      }

      const Policy<Scalar> next = materialize_policy(state, k + 1, features);
      v_pi = policy_eval_exact(*reference, next);
      record.gap = (*v_star - *v_pi).cwiseAbs().maxCoeff();
      if (config.record_bounds && measure_eps_pi) {
        record.bound = theorem2_bound(out.trace.initial_gap, reference->discount(), config.h,
                                      config.schedule.c, worst_bound, k + 1);
      }
      Scalar eta = 0;
      for (Index s = 0; s < next.n_states(); ++s) {
        const Vector<Scalar> q = features.q_row(s, state.theta_list.back());
        const Vector<Scalar>& old_row = policy_row_on_demand(state, k, s, features);
        if (config.schedule.mode == StepsizeMode::Infinite) {
          eta = std::numeric_limits<Scalar>::infinity();
          break;
        }
        eta = std::max(eta, detail::nonzero_stepsize(
                                state_stepsize(config.mirror, q, old_row, config.schedule.c_at(k))));
      }
      record.eta = eta;
    }
    if (config.timing)
      record.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    out.trace.records.push_back(record);
    out.diagnostics.push_back(diag);
    if (config.on_iteration && !config.on_iteration(record)) break;
  }
  return {std::move(state), std::move(out)};
}

}  // namespace hpmd
