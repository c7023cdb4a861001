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
#include <functional>

#include "hpmd/types.hpp"

namespace hpmd {

/// Linear-rate bound for exact h-PMD after k iterations:
///   gamma^{hk} gap0 + 1/(1-gamma) * sum_{t=1..k} c_{t-1} gamma^{h(k-t)}.
/// Evaluated in this factored form so large k does not overflow gamma^{-ht}.
template <typename Scalar, typename CSeq>
Scalar theorem1_bound(Scalar gap0, Scalar gamma, int h, const CSeq& c, long k) {
  detail::require(gamma > Scalar(0) && gamma < Scalar(1), "gamma must lie in (0,1)");
  detail::require(h >= 1 && k >= 0, "need h >= 1 and k >= 0");
  const Scalar rate = std::pow(gamma, Scalar(h));
  Scalar accumulated = 0;
  for (long t = 1; t <= k; ++t) accumulated = accumulated * rate + static_cast<Scalar>(c(t - 1));
  return std::pow(rate, Scalar(k)) * gap0 + accumulated / (Scalar(1) - gamma);
}

/// Inexact bound: theorem1_bound + 2b / ((1-gamma)(1-gamma^h)).
template <typename Scalar, typename CSeq>
Scalar theorem2_bound(Scalar gap0, Scalar gamma, int h, const CSeq& c, Scalar b, long k) {
  detail::require(b >= Scalar(0), "error level b must be nonnegative");
  return theorem1_bound(gap0, gamma, h, c, k) +
         Scalar(2) * b / ((Scalar(1) - gamma) * (Scalar(1) - std::pow(gamma, Scalar(h))));
}

/// High-probability sup error of the Monte Carlo lookahead estimate over a set
/// of |C| queries, with delta split evenly between leaves and branches:
///   gamma^{H+h}/(1-g) + gamma^h/(1-g) sqrt(log(2|S0||C|/dV)/M0)
///   + gamma^2 (1-gamma^{h-1})/(1-g)^2 sqrt(log(2 h A |S0||C|/dJ)/M).
inline double lookahead_error_bound(double gamma, int h, long horizon, long m_leaf, long m_branch,
                                    long n_actions, double leaf_count, double n_queries,
                                    double delta) {
  detail::require(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
  const double g1 = 1.0 - gamma;
  const double delta_v = delta / 2.0;
  const double delta_j = delta / 2.0;
  const double truncation = std::pow(gamma, double(horizon + h)) / g1;
  const double leaves = std::pow(gamma, double(h)) / g1 *
                        std::sqrt(std::log(2.0 * leaf_count * n_queries / delta_v) / double(m_leaf));
  const double branches =
      gamma * gamma * (1.0 - std::pow(gamma, double(h - 1))) / (g1 * g1) *
      std::sqrt(std::log(2.0 * h * double(n_actions) * leaf_count * n_queries / delta_j) /
                double(m_branch));
  return truncation + leaves + branches;
}

/// Target accuracy of the least-squares regression targets when the tree
/// size is capped by Z = A^h M^h and the design has at most d^2 points.
inline double regression_target_error(double gamma, int h, long horizon, long m_leaf, long m_branch,
                                      long n_actions, int dim, double delta) {
  const double g1 = 1.0 - gamma;
  const double log_z = h * std::log(double(n_actions)) + h * std::log(double(m_branch));
  const double log_zd = log_z + std::log(4.0 * double(dim) * double(dim) / delta);
  return std::pow(gamma, double(horizon + h)) / g1 +
         std::pow(gamma, double(h)) / g1 * std::sqrt(log_zd / double(m_leaf)) +
         gamma * gamma * (1.0 - std::pow(gamma, double(h - 1))) / (g1 * g1) *
             std::sqrt((log_zd + std::log(double(h))) / double(m_branch));
}

/// Sup-norm extrapolation error of the fitted linear lookahead values:
/// eps_pi (1 + sqrt d) + eps_q sqrt d.
inline double extrapolation_bound(double eps_pi, double eps_q, int dim) {
  const double root_d = std::sqrt(double(dim));
  return eps_pi * (1.0 + root_d) + eps_q * root_d;
}

}  // namespace hpmd
