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

#include <fstream>

#include <json.hpp>

#include "hpmd/bellman.hpp"
#include "hpmd/bounds.hpp"
#include "hpmd/envs.hpp"
#include "hpmd/estimator.hpp"
#include "oracles.hpp"

using namespace hpmd;

namespace {

TabularMdp<double> single_state(double reward, double gamma, Index actions = 1) {
  Matrix<double> P = Matrix<double>::Ones(actions, 1);
  Matrix<double> r = Matrix<double>::Constant(1, actions, reward);
  return TabularMdp<double>::from_dense(P, r, gamma, Vector<double>::Ones(1));
}

// 0 -> 1 -> 0 -> ... under either action; rewards r(0,.) = 0.3, r(1,.) = 0.8.
TabularMdp<double> two_cycle(double gamma) {
  Matrix<double> P(4, 2);
  P << 0, 1, 0, 1, 1, 0, 1, 0;
  Matrix<double> r(2, 2);
  r << 0.3, 0.3, 0.8, 0.8;
  return TabularMdp<double>::from_dense(P, r, gamma, Vector<double>::Constant(2, 0.5));
}

double max_error(const LookaheadEstimate<double>& est, const QTable<double>& truth) {
  double worst = 0;
  for (const auto& [sa, value] : est.q_hat) worst = std::max(worst, std::abs(value - truth(sa.state, sa.action)));
  return worst;
}

}  // namespace

TEST_CASE("rollout value on hand-unrolled returns") {
  const TabularModel<double> one(single_state(1.0, 0.5));
  const auto pi = Policy<double>::uniform(1, 1);
  for (long m0 : {1, 7, 40}) {
    SplitMix64 rng(5);
    CHECK(rollout_value(one, pi, 0, m0, 3, rng) == doctest::Approx(1.75).epsilon(1e-15));
  }
  const TabularModel<double> zero(single_state(0.0, 0.9));
  SplitMix64 rng(1);
  CHECK(rollout_value(zero, pi, 0, 10, 50, rng) == 0.0);

  const TabularModel<double> cycle(two_cycle(0.9));
  const auto pi2 = Policy<double>::uniform(2, 2);
  // 0.3 + 0.9*0.8 + 0.81*0.3 + 0.729*0.8
  SplitMix64 rng2(2);
  CHECK(rollout_value(cycle, pi2, 0, 5, 4, rng2) == doctest::Approx(0.3 + 0.72 + 0.243 + 0.5832).epsilon(1e-14));
  CHECK_THROWS_AS(rollout_value(cycle, pi2, 0, 0, 4, rng2), InvalidArgument);
}

TEST_CASE("deterministic MDP and deterministic policy give Q^pi up to truncation") {
  const auto mdp = build_deepsea<double>({4, 0.0, 0.9});
  const TabularModel<double> model(mdp);
  std::vector<Index> right(static_cast<std::size_t>(mdp.n_states()), kDeepSeaRight);
  const auto pi = Policy<double>::deterministic(right, 2);
  const auto q = lookahead_values(mdp, pi, 1).second;
  const long horizon = 40;
  const auto est = estimate_q_h(model, pi, all_state_actions(mdp.n_states(), 2),
                                EstimatorParams::uniform(1, 1, 3, horizon));
  CHECK(max_error(est, q) <= std::pow(0.9, horizon) / 0.1 + 1e-12);
}

TEST_CASE("single-action MDP: every depth targets Q^pi") {
  // With one action the optimality and expectation operators coincide.
  Matrix<double> P(3, 3);
  P << 0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.3, 0.3, 0.4;
  Matrix<double> r(3, 1);
  r << 0.1, 0.9, 0.5;
  const auto mdp = TabularMdp<double>::from_dense(P, r, 0.8, Vector<double>::Constant(3, 1.0 / 3));
  const TabularModel<double> model(mdp);
  const auto pi = Policy<double>::uniform(3, 1);
  const auto q_pi = lookahead_values(mdp, pi, 1).second;
  for (int h : {1, 2, 4}) {
    CHECK((lookahead_values(mdp, pi, h).second - q_pi).cwiseAbs().maxCoeff() < 1e-12);
    const long m = 400, m0 = 400, horizon = 80;
    const auto est = estimate_q_h(model, pi, all_state_actions(3, 1), EstimatorParams::uniform(h, m, m0, horizon, 9));
    const double bound = lookahead_error_bound(0.8, h, horizon, m0, m, 1, 3.0, 3.0, 0.01);
    CHECK(max_error(est, q_pi) <= bound);
  }
}

TEST_CASE("estimates are deterministic and independent of thread count") {
  const auto mdp = build_random_mdp<double>(6, 3, 2);
  const TabularModel<double> model(mdp);
  const auto pi = Policy<double>::uniform(6, 3);
  auto params = EstimatorParams::uniform(3, 4, 6, 25, 77);
  const auto queries = all_state_actions(6, 3);
  const auto a = estimate_q_h(model, pi, queries, params, 4);
  const auto b = estimate_q_h(model, pi, queries, params, 4);
  params.n_threads = 4;
  const auto c = estimate_q_h(model, pi, queries, params, 4);
  CHECK(a.q_hat == b.q_hat);
  CHECK(a.q_hat == c.q_hat);
  CHECK(a.layer_sizes == c.layer_sizes);
  const auto other_iteration = estimate_q_h(model, pi, queries, params, 5);
  CHECK(a.q_hat != other_iteration.q_hat);
  // Queries given in another order or repeated do not change the result.
  auto shuffled = queries;
  std::reverse(shuffled.begin(), shuffled.end());
  shuffled.push_back(queries.front());
  CHECK(estimate_q_h(model, pi, shuffled, params, 4).q_hat == a.q_hat);
}

TEST_CASE("estimates stay in [0, 1/(1-gamma)]") {
  const auto mdp = build_random_mdp<double>(5, 2, 8);
  const TabularModel<double> model(mdp);
  const auto pi = Policy<double>::uniform(5, 2);
  for (int h : {1, 2, 3}) {
    const auto est = estimate_q_h(model, pi, all_state_actions(5, 2), EstimatorParams::uniform(h, 2, 1, 5, 3));
    for (const auto& [sa, v] : est.q_hat) {
      CHECK(v >= 0.0);
      CHECK(v <= 10.0);
    }
  }
}

TEST_CASE("sample ledger equals simulator calls and the analytic count") {
  struct Case {
    int h;
    long m, m0, horizon;
    Index S, A;
    std::size_t n_queries;
  };
  for (const Case& c : {Case{1, 3, 4, 7, 6, 2, 12}, Case{2, 5, 2, 9, 8, 3, 5}, Case{4, 2, 3, 4, 10, 2, 1}}) {
    const auto mdp = build_random_mdp<double>(c.S, c.A, 12, 0.5);
    const TabularModel<double> inner(mdp);
    CountingModel<double> counted(inner);
    auto queries = all_state_actions(c.S, c.A);
    queries.resize(c.n_queries);
    const auto params = EstimatorParams::uniform(c.h, c.m, c.m0, c.horizon, 1);
    const auto est = estimate_q_h(counted, Policy<double>::uniform(c.S, c.A), queries, params);
    CHECK(est.samples.total() == counted.calls());
    const auto predicted = predicted_ledger(params, est.layer_sizes, c.A, c.n_queries);
    CHECK(predicted.rollout == est.samples.rollout);
    CHECK(predicted.branch == est.samples.branch);
    CHECK(est.samples.rollout == static_cast<long long>(est.layer_sizes[0]) * c.m0 * c.horizon);
  }
}

TEST_CASE("mean error shrinks as tree widths and rollouts double") {
  const auto mdp = build_random_mdp<double>(4, 2, 21);
  const TabularModel<double> model(mdp);
  const auto pi = Policy<double>::uniform(4, 2);
  const int h = 2;
  const auto truth = lookahead_values(mdp, pi, h).second;
  double previous = std::numeric_limits<double>::infinity();
  for (long m : {8, 16, 32, 64}) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto est = estimate_q_h(model, pi, all_state_actions(4, 2), EstimatorParams::uniform(h, m, m, 150, seed));
      total += max_error(est, truth);
    }
    const double mean = total / 50;
    CHECK(mean <= previous);
    previous = mean;
  }
}

TEST_CASE("depth-one estimator is unbiased for the truncated target") {
  // Two states, one action each way; policy mixes actions.
  Matrix<double> P(4, 2);
  P << 0.7, 0.3, 0.2, 0.8, 0.4, 0.6, 0.9, 0.1;
  Matrix<double> r(2, 2);
  r << 0.2, 0.6, 1.0, 0.0;
  const auto mdp = TabularMdp<double>::from_dense(P, r, 0.8, Vector<double>::Constant(2, 0.5));
  const TabularModel<double> model(mdp);
  Matrix<double> probs(2, 2);
  probs << 0.3, 0.7, 0.5, 0.5;
  const Policy<double> pi(probs);
  const long horizon = 6;
  // E[V_hat(s)] = sum_{t<H} gamma^t (P^pi)^t r^pi.
  const oracle::Mat kernel = oracle::dense_kernel(mdp);
  oracle::Mat P_pi = oracle::Mat::Zero(2, 2);
  oracle::Vec r_pi = oracle::Vec::Zero(2);
  for (Index s = 0; s < 2; ++s)
    for (Index a = 0; a < 2; ++a) {
      P_pi.row(s) += probs(s, a) * kernel.row(s * 2 + a);
      r_pi(s) += probs(s, a) * r(s, a);
    }
  oracle::Vec truncated = oracle::Vec::Zero(2);
  oracle::Vec term = r_pi;
  for (long t = 0; t < horizon; ++t) {
    truncated += std::pow(0.8, double(t)) * term;
    term = P_pi * term;
  }
  const oracle::Mat expected = oracle::q_from_v(mdp, truncated);

  const int trials = 10000;
  Matrix<double> sum = Matrix<double>::Zero(2, 2), sum_sq = Matrix<double>::Zero(2, 2);
  for (int seed = 0; seed < trials; ++seed) {
    const auto est = estimate_q_h(model, pi, all_state_actions(2, 2),
                                  EstimatorParams::uniform(1, 1, 1, horizon, static_cast<std::uint64_t>(seed)));
    const auto q = est.table(2, 2);
    sum += q;
    sum_sq += q.cwiseAbs2();
  }
  for (Index s = 0; s < 2; ++s)
    for (Index a = 0; a < 2; ++a) {
      const double mean = sum(s, a) / trials;
      const double var = sum_sq(s, a) / trials - mean * mean;
      const double se = std::sqrt(var / trials);
      CHECK(std::abs(mean - expected(s, a)) <= 3 * se);
    }
}

TEST_CASE("aggregate concentration bound holds on repeated trials") {
  const auto mdp = build_random_mdp<double>(5, 2, 31);
  const TabularModel<double> model(mdp);
  const auto pi = Policy<double>::uniform(5, 2);
  const int h = 2;
  const long m = 300, m0 = 300, horizon = 120;
  const auto truth = lookahead_values(mdp, pi, h).second;
  int held = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    const auto est = estimate_q_h(model, pi, all_state_actions(5, 2),
                                  EstimatorParams::uniform(h, m, m0, horizon, 1000 + static_cast<std::uint64_t>(t)));
    const double bound = lookahead_error_bound(0.9, h, horizon, m0, m, 2, double(est.layer_sizes[0]), 10.0, 0.05);
    held += max_error(est, truth) <= bound;
  }
  CHECK(held >= 19);
}

TEST_CASE("accuracy budget: horizon formula and saturation") {
  const auto budget = params_for_accuracy(0.9, 1, 0.1, 0.1, 2, 4);
  CHECK(budget.b == doctest::Approx(2.5e-4).epsilon(1e-12));
  const double horizon_rhs = 10.0 * std::log(3 * 0.9 / (2.5e-4 * 0.1));
  CHECK(budget.params.horizon == static_cast<long>(std::floor(horizon_rhs)) + 1);
  CHECK(budget.params.horizon == 116);
  // Depth one has no branch error term, so one child per pair suffices.
  CHECK(budget.params.branch(1) == 1);

  const auto loose = params_for_accuracy(0.9, 3, 1e12, 0.1, 2, 4);
  CHECK(loose.params.m_leaf == 1);
  CHECK(loose.params.horizon == 1);
  CHECK(loose.params.branch(1) == 1);
  CHECK(loose.iterations == 1);

  CHECK_THROWS_AS(params_for_accuracy(0.9, 1, 0.0, 0.1, 2, 4), InvalidArgument);
  CHECK_THROWS_AS(params_for_accuracy(0.9, 1, 0.1, 1.0, 2, 4), InvalidArgument);
  CHECK_THROWS_AS(params_for_accuracy(0.9, 1, 0.1, 0.0, 2, 4), InvalidArgument);
}

TEST_CASE("accuracy budget golden values") {
  std::ifstream in(std::string(HPMD_GOLDEN_DIR) + "/params_for_accuracy.json");
  REQUIRE(in.good());
  const auto golden = nlohmann::json::parse(in);
  const auto budget = params_for_accuracy(golden["gamma"].get<double>(), golden["h"].get<int>(),
                                          golden["epsilon"].get<double>(), golden["delta"].get<double>(),
                                          golden["n_actions"].get<long>(), golden["n_queries"].get<long>());
  CHECK(budget.b == doctest::Approx(golden["b"].get<double>()).epsilon(1e-12));
  CHECK(budget.params.branch(1) == golden["m"].get<long>());
  CHECK(budget.params.m_leaf == golden["m_leaf"].get<long>());
  CHECK(budget.params.horizon == golden["horizon"].get<long>());
  CHECK(budget.iterations == golden["iterations"].get<long>());
  CHECK(budget.log_leaf_cap == doctest::Approx(golden["log_leaf_cap"].get<double>()).epsilon(1e-12));
  CHECK(budget.capped);
}

TEST_CASE("estimator parameter validation") {
  auto p = EstimatorParams::uniform(2, 3, 3, 3);
  CHECK_NOTHROW(p.validate());
  p.m_branch = {3};
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p = EstimatorParams::uniform(2, 3, 0, 3);
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p = EstimatorParams::uniform(1, 3, 3, 0);
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
}
