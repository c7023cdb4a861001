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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hpmd/envs.hpp"
#include "hpmd/io.hpp"

namespace hpmd {

/// Raised for invalid experiment configs; the message starts with the field
/// path (e.g. "algorithm.n_iters") or the line/column of a syntax error.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScheduleVariant { PerH, Shared, Infinite };
enum class AlgorithmKind { Exact, Inexact, LinearFA };

struct EnvironmentSpec {
  /// "deepsea", "random", "chain" or "file".
  std::string type = "deepsea";
  DeepSeaSpec deepsea;
  Index n_states = 10;
  Index n_actions = 2;
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  double discount = 0.9;
  double slip = 0.0;
  std::filesystem::path path;
};

struct EstimatorSpec {
  /// Explicit widths; used when `epsilon` is unset.
  long m = 8;
  long m_leaf = 8;
  long horizon = 50;
  /// Target accuracy and confidence; when set, widths come from params_for_accuracy.
  std::optional<double> epsilon;
  double delta = 0.1;
  int n_threads = 1;
};

struct FeatureSpec {
  /// "one_hot", "deepsea_tiles" or "file".
  std::string type = "one_hot";
  Index row_blocks = 8;
  Index col_blocks = 4;
  std::filesystem::path path;
  double eps_kw = 0.01;
  bool measure_eps_pi = false;
};

struct ExperimentConfig {
  EnvironmentSpec environment;
  AlgorithmKind algorithm = AlgorithmKind::Exact;
  MirrorMap mirror = MirrorMap::NegativeEntropy;
  ScheduleVariant schedule = ScheduleVariant::PerH;
  StepsizeScope scope = StepsizeScope::Uniform;
  long n_iters = 100;
  double gap_tolerance = 0.0;
  bool record_bounds = true;
  EstimatorSpec estimator;
  FeatureSpec features;
  std::vector<int> h_values{1};
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "results";
  /// Gap level for the iterations/samples-to-threshold summary.
  double threshold = 1e-3;
  bool timing = false;
  int jobs = 1;
};

/// Parses the JSON config. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

TabularMdp<double> build_environment(const EnvironmentSpec& spec);
StepsizeSchedule<double> make_schedule(ScheduleVariant variant, double gamma, int h);
/// Estimator widths for depth h (explicit, or derived from the accuracy target).
EstimatorParams make_estimator(const EstimatorSpec& spec, double gamma, int h, Index n_actions,
                               Index n_queries);

struct RunResult {
  int h = 1;
  std::uint64_t seed = 0;
  IterateTrace<double> trace;
  std::filesystem::path csv;
};

struct ExperimentResult {
  std::vector<RunResult> runs;
  bool interrupted = false;
  std::filesystem::path aggregate_csv;
  std::filesystem::path summary_csv;
};

/// Runs every (h, seed) cell, writing run_h{h}_seed{seed}.csv per cell plus
/// aggregate.csv and summary.csv. Setting *stop ends all runs after their
/// current iteration; results so far are still written.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::atomic<bool>* stop = nullptr);

void write_run_csv(std::ostream& out, const IterateTrace<double>& trace);
void write_aggregate_csv(std::ostream& out, const std::vector<RunResult>& runs);
void write_summary_csv(std::ostream& out, const std::vector<RunResult>& runs, double threshold);

}  // namespace hpmd
