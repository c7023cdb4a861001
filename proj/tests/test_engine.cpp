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

#include "hpmd/engine.hpp"
#include "hpmd/envs.hpp"
#include "oracles.hpp"

using namespace hpmd;

namespace {

RunConfig<double> exact_config(int h, long iters, MirrorMap map, StepsizeSchedule<double> schedule) {
  RunConfig<double> config;
  config.h = h;
  config.n_iters = iters;
  config.mirror = map;
  config.schedule = std::move(schedule);
  return config;
}

std::vector<Index> greedy_actions(const Policy<double>& pi) {
  std::vector<Index> actions;
  for (Index s = 0; s < pi.n_states(); ++s) {
    Index a = 0;
    pi.row(s).maxCoeff(&a);
    actions.push_back(a);
  }
  return actions;
}

}  // namespace

TEST_CASE("rate bound: trivial cases and direct summation") {
  auto zero = [](long) { return 0.0; };
  CHECK(theorem1_bound(3.0, 0.9, 2, zero, 0) == 3.0);
  CHECK(theorem1_bound(3.0, 0.9, 2, zero, 5) == doctest::Approx(3.0 * std::pow(0.9, 10)));
  const double g = 0.9;
  auto c = [g](long k) { return std::pow(g, 2.0 * (k + 1)); };
  // gamma^3 (1 + 10 (c0/g + c1/g^2 + c2/g^3)) with c_t = g^{2(t+1)}.
  const double direct = std::pow(g, 3) * (1.0 + 10.0 * (g * g / g + std::pow(g, 4) / (g * g) + std::pow(g, 6) / std::pow(g, 3)));
  CHECK(theorem1_bound(1.0, g, 1, c, 3) == doctest::Approx(direct).epsilon(1e-14));
  // Far iterates stay finite.
  CHECK(std::isfinite(theorem1_bound(1.0, 0.99, 20, c, 5000)));
}

TEST_CASE("error-floor bound additive term") {
  const double g = 0.9;
  auto c = [g](long k) { return std::pow(g, 2.0 * (k + 1)); };
  CHECK(theorem2_bound(1.0, g, 2, c, 0.0, 7) == theorem1_bound(1.0, g, 2, c, 7));
  auto zero = [](long) { return 0.0; };
  CHECK(theorem2_bound(0.0, g, 2, zero, 0.1, 0) == doctest::Approx(2 * 0.1 / (0.1 * 0.19)));
  CHECK(theorem2_bound(0.0, g, 400, zero, 0.1, 0) == doctest::Approx(2 * 0.1 / 0.1));
  CHECK_THROWS_AS(theorem2_bound(0.0, g, 2, zero, -0.1, 0), InvalidArgument);
}

TEST_CASE("infinite stepsize at depth one follows classic policy iteration") {
  const auto mdp = build_random_mdp<double>(10, 4, 17);
  auto config = exact_config(1, 8, MirrorMap::NegativeEntropy, StepsizeSchedule<double>::infinite());
  const auto pi0 = Policy<double>::uniform(10, 4);
  std::vector<std::vector<Index>> engine_actions;
  Policy<double> current = pi0;
  for (int k = 0; k < 8; ++k) {
    auto one = config;
    one.n_iters = 1;
    current = run_exact(mdp, one, current).first;
    engine_actions.push_back(greedy_actions(current));
  }
  const auto reference = oracle::h_policy_iteration(mdp, pi0.probs(), 1, 8);
  CHECK(engine_actions == reference);
}

TEST_CASE("infinite stepsize at depth three follows h-step policy iteration") {
  const auto mdp = build_random_mdp<double>(10, 4, 23);
  const auto pi0 = Policy<double>::uniform(10, 4);
  const auto reference = oracle::h_policy_iteration(mdp, pi0.probs(), 3, 6);
  Policy<double> current = pi0;
  auto config = exact_config(3, 1, MirrorMap::SquaredEuclidean, StepsizeSchedule<double>::infinite());
  for (int k = 0; k < 6; ++k) {
    current = run_exact(mdp, config, current).first;
    CHECK(greedy_actions(current) == reference[static_cast<std::size_t>(k)]);
  }
}

TEST_CASE("exact runs improve monotonically and respect the rate bound") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto mdp = build_random_mdp<double>(12, 3, 40 + seed);
    for (int h : {1, 2, 3, 5}) {
      for (MirrorMap map : {MirrorMap::NegativeEntropy, MirrorMap::SquaredEuclidean}) {
        auto config = exact_config(h, 30, map, StepsizeSchedule<double>::per_depth(0.9, h));
        Policy<double> previous = Policy<double>::uniform(12, 3);
        VTable<double> v_prev = policy_eval_exact(mdp, previous);
        config.on_iteration = [&](const IterationRecord<double>& r) {
          CHECK(r.gap >= 0.0);
          CHECK(r.gap <= r.bound + 1e-8);
          return true;
        };
        const auto [final_policy, trace] = run_exact(mdp, config, previous);
        CHECK(trace.records.size() == 30);
        // Re-run step by step for the monotonicity check.
        auto step = config;
        step.n_iters = 1;
        step.on_iteration = nullptr;
        for (int k = 0; k < 10; ++k) {
          auto next = run_exact(mdp, step, previous).first;
          const auto v_next = policy_eval_exact(mdp, next);
          CHECK(((v_next - v_prev).array() >= -1e-9).all());
          previous = next;
          v_prev = v_next;
        }
      }
    }
  }
}

TEST_CASE("infinite stepsize contracts the gap by gamma^h") {
  const auto mdp = build_random_mdp<double>(15, 3, 5);
  for (int h : {1, 2, 4}) {
    const auto config = exact_config(h, 12, MirrorMap::NegativeEntropy, StepsizeSchedule<double>::infinite());
    const auto [pi, trace] = run_exact(mdp, config, Policy<double>::uniform(15, 3));
    double previous = trace.initial_gap;
    for (const auto& r : trace.records) {
      CHECK(r.gap <= std::pow(0.9, h) * previous + 1e-10);
      previous = r.gap;
    }
  }
}

TEST_CASE("KL runs need a full-support initial policy") {
  const auto mdp = build_random_mdp<double>(3, 2, 1);
  const std::vector<Index> actions{0, 1, 0};
  const auto config = exact_config(1, 2, MirrorMap::NegativeEntropy, StepsizeSchedule<double>::per_depth(0.9, 1));
  CHECK_THROWS_AS(run_exact(mdp, config, Policy<double>::deterministic(actions, 2)), InvalidArgument);
  const auto euclid = exact_config(1, 2, MirrorMap::SquaredEuclidean, StepsizeSchedule<double>::per_depth(0.9, 1));
  CHECK_NOTHROW(run_exact(mdp, euclid, Policy<double>::deterministic(actions, 2)));
}

TEST_CASE("early stop and caller stop") {
  const auto mdp = build_random_mdp<double>(8, 2, 3);
  auto config = exact_config(2, 500, MirrorMap::NegativeEntropy, StepsizeSchedule<double>::per_depth(0.9, 2));
  config.gap_tolerance = 1e-6;
  const auto [pi, trace] = run_exact(mdp, config, Policy<double>::uniform(8, 2));
  CHECK(trace.records.size() < 500);
  CHECK(trace.records.back().gap <= 1e-6);
  for (std::size_t i = 0; i + 1 < trace.records.size(); ++i) CHECK(trace.records[i].gap > 1e-6);

  config.gap_tolerance = 0;
  config.on_iteration = [](const IterationRecord<double>& r) { return r.iteration < 3; };
  CHECK(run_exact(mdp, config, Policy<double>::uniform(8, 2)).second.records.size() == 3);
}

TEST_CASE("noise-free inexact run reproduces the exact run") {
  const auto mdp = build_deepsea<double>({6, 0.0, 0.9});
  const TabularModel<double> model(mdp);
  std::vector<Index> left(static_cast<std::size_t>(mdp.n_states()), kDeepSeaLeft);
  const auto pi0 = Policy<double>::deterministic(left, 2);
  auto config = exact_config(2, 6, MirrorMap::NegativeEntropy, StepsizeSchedule<double>::infinite());
  const auto exact = run_exact(mdp, config, pi0).second;
  config.mode = RunMode::Inexact;
  config.estimator = EstimatorParams::uniform(2, 2, 2, 250);
  const auto inexact = run_inexact(model, config, pi0).second;
  REQUIRE(exact.records.size() == inexact.records.size());
  for (std::size_t k = 0; k < exact.records.size(); ++k)
    CHECK(std::abs(exact.records[k].gap - inexact.records[k].gap) <= 1e-6);
  CHECK(inexact.max_estimation_error <= std::pow(0.9, 250) / 0.1 + 1e-12);
}

TEST_CASE("biased oracle settles below the error floor") {
  const auto mdp = build_random_mdp<double>(5, 3, 14);
  const double b = 0.1, gamma = 0.9;
  const int h = 2;
  const double floor = 2 * b / ((1 - gamma) * (1 - std::pow(gamma, h)));
  for (int pattern = 0; pattern < 2; ++pattern) {
    LookaheadOracle<double> biased = [&](const Policy<double>&, long k, const VTable<double>* v_pi) {
      QTable<double> q = lookahead_from_value(mdp, *v_pi, h).second;
      for (Index s = 0; s < q.rows(); ++s)
        for (Index a = 0; a < q.cols(); ++a)
          q(s, a) += pattern == 0 ? b : (((s + a + k) % 2) ? b : -b);
      return OracleAnswer<double>{q, {}};
    };
    auto config = exact_config(h, 500, MirrorMap::NegativeEntropy, StepsizeSchedule<double>::per_depth(gamma, h));
    config.mode = RunMode::Inexact;
    config.estimator = EstimatorParams::uniform(h, 1, 1, 1);
    config.error_level = b;
    const auto trace = run_with_oracle(biased, config, Policy<double>::uniform(5, 3), &mdp).second;
    CHECK(trace.records.back().gap <= floor + 1e-6);
    for (const auto& r : trace.records) CHECK(r.gap <= r.bound + 1e-8);
  }
}

TEST_CASE("inexact trace counts every simulator call") {
  const auto mdp = build_random_mdp<double>(5, 2, 4);
  const TabularModel<double> inner(mdp);
  CountingModel<double> counted(inner);
  auto config = exact_config(2, 4, MirrorMap::SquaredEuclidean, StepsizeSchedule<double>::per_depth(0.9, 2));
  config.mode = RunMode::Inexact;
  config.estimator = EstimatorParams::uniform(2, 3, 4, 10);
  const auto trace = run_inexact(counted, config, Policy<double>::uniform(5, 2), &mdp).second;
  CHECK(trace.ledger.total() == counted.calls());
  long long cumulative = 0;
  for (const auto& r : trace.records) {
    cumulative += r.samples_iter;
    CHECK(r.samples_cum == cumulative);
  }
  CHECK(cumulative == counted.calls());
}

TEST_CASE("run configuration validation") {
  const auto mdp = build_random_mdp<double>(3, 2, 1);
  RunConfig<double> config;
  CHECK_THROWS_AS(run_exact(mdp, config, Policy<double>::uniform(3, 2)), InvalidArgument);
  config.schedule = StepsizeSchedule<double>::per_depth(0.9, 1);
  config.n_iters = 0;
  CHECK_THROWS_AS(run_exact(mdp, config, Policy<double>::uniform(3, 2)), InvalidArgument);
  config.n_iters = 1;
  config.mode = RunMode::Inexact;
  const TabularModel<double> model(mdp);
  CHECK_THROWS_AS(run_inexact(model, config, Policy<double>::uniform(3, 2)), InvalidArgument);
  config.estimator = EstimatorParams::uniform(2, 1, 1, 1);
  CHECK_THROWS_AS(run_inexact(model, config, Policy<double>::uniform(3, 2)), InvalidArgument);
}
