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

#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "hpmd/experiment.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

std::atomic<bool> g_stop{false};

extern "C" void on_interrupt(int) { g_stop.store(true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"h-step lookahead policy mirror descent experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  int jobs = 0;
  long long seed = -1;
  bool timing = false;

  auto* run = app.add_subcommand("run", "run the sweep described by a config file");
  run->add_option("-c,--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output-dir", output_dir, "output directory (overrides config and HPMD_OUTPUT_DIR)");
  run->add_option("-j,--jobs", jobs, "sweep cells run in parallel")->check(CLI::PositiveNumber);
  run->add_option("-s,--seed", seed, "replace the seed list with this single seed")->check(CLI::NonNegativeNumber);
  run->add_flag("--timing", timing, "record wall time per iteration (CSV no longer byte-stable)");

  auto* validate = app.add_subcommand("validate", "check a config file without running it");
  validate->add_option("-c,--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);

  std::string mdp_out;
  auto* export_mdp = app.add_subcommand("export-mdp", "write the configured environment as MDP JSON");
  export_mdp->add_option("-c,--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  export_mdp->add_option("-o,--out", mdp_out, "destination file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  hpmd::ExperimentConfig config;
  try {
    config = hpmd::load_config(config_path);
  } catch (const hpmd::ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return kExitConfig;
  }

  if (*validate) {
    std::cout << config_path << ": ok\n";
    return 0;
  }

  try {
    if (*export_mdp) {
      hpmd::save_mdp(hpmd::build_environment(config.environment), mdp_out);
      return 0;
    }

    if (const char* env_dir = std::getenv("HPMD_OUTPUT_DIR"); env_dir && *env_dir) config.output_dir = env_dir;
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (jobs > 0) config.jobs = jobs;
    if (seed >= 0) config.seeds = {static_cast<std::uint64_t>(seed)};
    if (timing) config.timing = true;

    std::signal(SIGINT, on_interrupt);
    const auto result = hpmd::run_experiment(config, &g_stop);
    std::cout << "wrote " << result.runs.size() << " runs, " << result.aggregate_csv.string() << ", "
              << result.summary_csv.string() << '\n';
    if (result.interrupted) {
      std::cerr << "interrupted: partial results written\n";
      return kExitRuntime;
    }
    return 0;
  } catch (const hpmd::ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
