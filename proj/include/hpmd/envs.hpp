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
#include <cstdint>
#include <vector>

#include "hpmd/mdp.hpp"
#include "hpmd/random.hpp"

namespace hpmd {

/// DeepSea: an N x N grid walked from the top-left cell, one row down per step.
///
/// States 0..N^2-1 are cells in row-major order; state N^2 is an absorbing
/// terminal reached after the last row. Action 0 moves left, action 1 moves
/// right (columns clamp at the edges); with probability slip_prob the move is
/// flipped. Choosing right costs 0.01/N, and choosing right in the bottom-right
/// cell pays 1 on top of that cost. Rewards are mapped into [0,1] by r' = r + m with
/// m = 0.01/N on grid cells; the terminal pays 0. Every episode spends exactly
/// N steps on the grid, so the shift changes all returns by the same amount.
struct DeepSeaSpec {
  Index grid_size = 8;
  double slip_prob = 0.05;
  double discount = 0.99;

  double move_cost() const { return 0.01 / static_cast<double>(grid_size); }
  Index n_states() const { return grid_size * grid_size + 1; }
  Index cell(Index row, Index col) const { return row * grid_size + col; }
  Index terminal() const { return grid_size * grid_size; }

  void validate() const {
    detail::require(grid_size >= 1, "grid_size must be at least 1");
    detail::require(slip_prob >= 0.0 && slip_prob <= 0.5, "slip_prob must lie in [0, 0.5]");
    detail::require(discount > 0.0 && discount < 1.0, "discount must lie in (0,1)");
  }
};

inline constexpr Index kDeepSeaLeft = 0;
inline constexpr Index kDeepSeaRight = 1;

template <typename Scalar = double>
TabularMdp<Scalar> build_deepsea(const DeepSeaSpec& spec) {
  spec.validate();
  const Index N = spec.grid_size;
  const Index S = spec.n_states();
  const Index A = 2;
  const Scalar cost = static_cast<Scalar>(spec.move_cost());
  const Scalar slip = static_cast<Scalar>(spec.slip_prob);

  std::vector<Eigen::Triplet<Scalar>> entries;
  Matrix<Scalar> reward = Matrix<Scalar>::Zero(S, A);
  auto destination = [&](Index row, Index col, Index move) {
    if (row + 1 >= N) return spec.terminal();
    const Index next_col = move == kDeepSeaRight ? std::min(col + 1, N - 1) : std::max(col - 1, Index(0));
    return spec.cell(row + 1, next_col);
  };
  for (Index row = 0; row < N; ++row) {
    for (Index col = 0; col < N; ++col) {
      const Index s = spec.cell(row, col);
      for (Index a = 0; a < A; ++a) {
        const Index intended = destination(row, col, a);
        const Index flipped = destination(row, col, 1 - a);
        if (intended == flipped || slip == Scalar(0)) {
          entries.emplace_back(s * A + a, intended, Scalar(1));
        } else {
          entries.emplace_back(s * A + a, intended, Scalar(1) - slip);
          entries.emplace_back(s * A + a, flipped, slip);
        }
        Scalar raw = a == kDeepSeaRight ? -cost : Scalar(0);
        if (a == kDeepSeaRight && row == N - 1 && col == N - 1) raw += Scalar(1);
        reward(s, a) = raw + cost;
      }
    }
  }
  for (Index a = 0; a < A; ++a) entries.emplace_back(spec.terminal() * A + a, spec.terminal(), Scalar(1));

  SparseMatrix<Scalar> transition(S * A, S);
  transition.setFromTriplets(entries.begin(), entries.end());
  Vector<Scalar> start = Vector<Scalar>::Zero(S);
  start(spec.cell(0, 0)) = Scalar(1);
  return TabularMdp<Scalar>(S, A, std::move(transition), std::move(reward),
                            static_cast<Scalar>(spec.discount), std::move(start));
}

/// Random MDP with Dirichlet(1) transition rows and U[0,1] rewards. With
/// sparsity > 0 each next state is dropped from a row with that probability
/// (one survivor is always kept) before the Dirichlet draw.
template <typename Scalar = double>
TabularMdp<Scalar> build_random_mdp(Index n_states, Index n_actions, std::uint64_t seed,
                                    double sparsity = 0.0, double discount = 0.9) {
  detail::require(n_states >= 1 && n_actions >= 1, "need at least one state and action");
  detail::require(sparsity >= 0.0 && sparsity < 1.0, "sparsity must lie in [0,1)");
  SplitMix64 rng(stream_key(seed, {0x72616e646f6dULL}));
  auto positive_uniform = [&] {
    double u = rng.uniform();
    while (u == 0.0) u = rng.uniform();
    return u;
  };

  std::vector<Eigen::Triplet<Scalar>> entries;
  std::vector<double> weights(static_cast<std::size_t>(n_states));
  for (Index row = 0; row < n_states * n_actions; ++row) {
    double total = 0;
    for (Index t = 0; t < n_states; ++t) {
      const bool keep = sparsity == 0.0 || rng.uniform() >= sparsity;
      weights[static_cast<std::size_t>(t)] = keep ? -std::log(positive_uniform()) : 0.0;
      total += weights[static_cast<std::size_t>(t)];
    }
    if (total == 0.0) {
      const auto survivor = static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n_states));
      weights[survivor] = 1.0;
      total = 1.0;
    }
    for (Index t = 0; t < n_states; ++t) {
      const double w = weights[static_cast<std::size_t>(t)];
      if (w > 0.0) entries.emplace_back(row, t, static_cast<Scalar>(w / total));
    }
  }
  SparseMatrix<Scalar> transition(n_states * n_actions, n_states);
  transition.setFromTriplets(entries.begin(), entries.end());

  Matrix<Scalar> reward(n_states, n_actions);
  for (Index s = 0; s < n_states; ++s)
    for (Index a = 0; a < n_actions; ++a) reward(s, a) = static_cast<Scalar>(rng.uniform());
  Vector<Scalar> start = Vector<Scalar>::Constant(n_states, Scalar(1) / Scalar(n_states));
  return TabularMdp<Scalar>(n_states, n_actions, std::move(transition), std::move(reward),
                            static_cast<Scalar>(discount), std::move(start));
}

/// Chain of n states. Action 1 advances one state (staying at the end) and
/// action 0 returns to state 0; with probability slip the other action's
/// move happens instead. Action 1 at the last state pays 1, action 0 anywhere
/// pays `small_reward`.
template <typename Scalar = double>
TabularMdp<Scalar> build_chain(Index n_states, double discount = 0.9, double slip = 0.0,
                               double small_reward = 0.01) {
  detail::require(n_states >= 2, "chain needs at least two states");
  detail::require(slip >= 0.0 && slip <= 0.5, "slip must lie in [0, 0.5]");
  detail::require(small_reward >= 0.0 && small_reward <= 1.0, "small_reward must lie in [0,1]");
  const Index A = 2;
  Matrix<Scalar> P = Matrix<Scalar>::Zero(n_states * A, n_states);
  Matrix<Scalar> reward = Matrix<Scalar>::Zero(n_states, A);
  for (Index s = 0; s < n_states; ++s) {
    const Index forward = std::min(s + 1, n_states - 1);
    P(s * A + 1, forward) += Scalar(1 - slip);
    P(s * A + 1, 0) += Scalar(slip);
    P(s * A + 0, 0) += Scalar(1 - slip);
    P(s * A + 0, forward) += Scalar(slip);
    reward(s, 0) = Scalar(small_reward);
  }
  reward(n_states - 1, 1) = Scalar(1);
  Vector<Scalar> start = Vector<Scalar>::Zero(n_states);
  start(0) = Scalar(1);
  return TabularMdp<Scalar>::from_dense(P, reward, Scalar(discount), start);
}

/// Tile-coded DeepSea features: one indicator per (row block, column block,
/// action), so d = row_blocks * col_blocks * 2. The terminal state maps to zero.
template <typename Scalar = double>
Matrix<Scalar> deepsea_tile_features(const DeepSeaSpec& spec, Index row_blocks, Index col_blocks) {
  spec.validate();
  const Index N = spec.grid_size;
  detail::require(row_blocks >= 1 && row_blocks <= N && col_blocks >= 1 && col_blocks <= N,
                  "tile counts must lie in [1, grid_size]");
  const Index A = 2;
  Matrix<Scalar> psi = Matrix<Scalar>::Zero(spec.n_states() * A, row_blocks * col_blocks * A);
  for (Index row = 0; row < N; ++row) {
    for (Index col = 0; col < N; ++col) {
      const Index tile = (row * row_blocks / N) * col_blocks + col * col_blocks / N;
      for (Index a = 0; a < A; ++a) psi(spec.cell(row, col) * A + a, tile * A + a) = Scalar(1);
    }
  }
  return psi;
}

}  // namespace hpmd
