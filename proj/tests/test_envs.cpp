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

#include <doctest.h>

#include "hpmd/envs.hpp"
#include "hpmd/io.hpp"
#include "hpmd/linfa.hpp"
#include "oracles.hpp"

#include <filesystem>

using namespace hpmd;

TEST_CASE("two-by-two DeepSea: always moving right is optimal") {
  const DeepSeaSpec spec{2, 0.0, 0.9};
  const auto mdp = build_deepsea<double>(spec);
  CHECK(mdp.n_states() == 5);
  const auto brute = oracle::brute_force_optimum(mdp);
  const auto [v, pi] = optimal_value_exact(mdp);
  CHECK((v - brute.value).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(pi(spec.cell(0, 0), kDeepSeaRight) == 1.0);
  CHECK(pi(spec.cell(1, 1), kDeepSeaRight) == 1.0);
  // Always right from the start reaches the treasure: rescaled rewards 0 then 1.
  CHECK(v(spec.cell(0, 0)) == doctest::Approx(0.9 * 1.0).epsilon(1e-12));
}

TEST_CASE("DeepSea kernel structure") {
  for (double slip : {0.0, 0.1}) {
    const DeepSeaSpec spec{5, slip, 0.95};
    const auto mdp = build_deepsea<double>(spec);
    const auto P = mdp.dense_transition();
    for (Index row = 0; row < P.rows(); ++row) {
      CHECK(P.row(row).sum() == doctest::Approx(1.0).epsilon(1e-14));
      if (slip == 0.0) CHECK(((P.row(row).array() == 0.0) || (P.row(row).array() == 1.0)).all());
    }
    for (Index a = 0; a < 2; ++a) {
      CHECK(mdp.probability(spec.terminal(), a, spec.terminal()) == 1.0);
      CHECK(mdp.reward(spec.terminal(), a) == 0.0);
    }
    // Rewards lie in [0,1]; left pays the most except at the treasure.
    CHECK(mdp.reward(spec.cell(4, 4), kDeepSeaRight) == 1.0);
    CHECK(mdp.reward(spec.cell(2, 1), kDeepSeaRight) == 0.0);
    CHECK(mdp.reward(spec.cell(2, 1), kDeepSeaLeft) > 0.0);
    CHECK(mdp.initial_dist()(spec.cell(0, 0)) == 1.0);
  }
  const DeepSeaSpec slippery{4, 0.2, 0.9};
  const auto mdp = build_deepsea<double>(slippery);
  CHECK(mdp.probability(slippery.cell(1, 1), kDeepSeaRight, slippery.cell(2, 2)) == doctest::Approx(0.8));
  CHECK(mdp.probability(slippery.cell(1, 1), kDeepSeaRight, slippery.cell(2, 0)) == doctest::Approx(0.2));
  CHECK(mdp.probability(slippery.cell(1, 0), kDeepSeaLeft, slippery.cell(2, 0)) == doctest::Approx(0.8));
  CHECK_THROWS_AS(build_deepsea<double>({4, 0.7, 0.9}), InvalidArgument);
}

TEST_CASE("large DeepSea sizes") {
  const auto mdp = build_deepsea<double>({64, 0.0, 0.99});
  CHECK(mdp.n_states() == 64 * 64 + 1);
  CHECK(mdp.n_actions() == 2);
}

TEST_CASE("random MDPs are reproducible and stochastic") {
  const auto a = build_random_mdp<double>(7, 3, 42, 0.3);
  const auto b = build_random_mdp<double>(7, 3, 42, 0.3);
  const auto c = build_random_mdp<double>(7, 3, 43, 0.3);
  CHECK(a.dense_transition() == b.dense_transition());
  CHECK(a.reward() == b.reward());
  CHECK(a.dense_transition() != c.dense_transition());
  const auto P = a.dense_transition();
  for (Index row = 0; row < P.rows(); ++row) CHECK(P.row(row).sum() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK((a.reward().array() >= 0.0).all());
  CHECK((a.reward().array() <= 1.0).all());
}

TEST_CASE("random MDP with three states and two actions matches the frozen copy") {
  const auto frozen = load_mdp(std::filesystem::path(HPMD_GOLDEN_DIR) / "random_mdp_s3_a2_seed0.json");
  const auto fresh = build_random_mdp<double>(3, 2, 0);
  CHECK(fresh.dense_transition() == frozen.dense_transition());
  CHECK(fresh.reward() == frozen.reward());
  CHECK(fresh.discount() == frozen.discount());
}

TEST_CASE("generative sampling matches the kernel") {
  const auto mdp = build_random_mdp<double>(4, 2, 8);
  const TabularModel<double> model(mdp);
  SplitMix64 rng(123);
  const int draws = 100000;
  for (Index a = 0; a < 2; ++a) {
    std::vector<int> counts(4, 0);
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(model.sample_next(1, a, rng))];
    for (Index t = 0; t < 4; ++t) {
      const double p = mdp.probability(1, a, t);
      const double se = std::sqrt(p * (1 - p) / draws);
      CHECK(std::abs(counts[static_cast<std::size_t>(t)] / double(draws) - p) <= 3 * se + 1e-12);
    }
  }
}

TEST_CASE("chain environment") {
  const auto mdp = build_chain<double>(5, 0.9);
  CHECK(mdp.probability(2, 1, 3) == 1.0);
  CHECK(mdp.probability(2, 0, 0) == 1.0);
  CHECK(mdp.probability(4, 1, 4) == 1.0);
  CHECK(mdp.reward(4, 1) == 1.0);
  const auto [v, pi] = optimal_value_exact(mdp);
  const auto brute = oracle::brute_force_optimum(mdp);
  CHECK((v - brute.value).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(pi(0, 1) == 1.0);
  CHECK_THROWS_AS(build_chain<double>(1), InvalidArgument);
}

TEST_CASE("DeepSea tile features have full rank and indicator structure") {
  const DeepSeaSpec spec{16, 0.05, 0.99};
  const auto psi = deepsea_tile_features<double>(spec, 8, 4);
  CHECK(psi.cols() == 64);
  CHECK(psi.rows() == spec.n_states() * 2);
  CHECK_NOTHROW(FeatureMap<double>(spec.n_states(), 2, psi));
  for (Index a = 0; a < 2; ++a) CHECK(psi.row(spec.terminal() * 2 + a).isZero(0.0));
  for (Index row = 0; row < psi.rows() - 2; ++row) CHECK(psi.row(row).sum() == 1.0);
}
