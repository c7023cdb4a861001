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

#include "hpmd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace hpmd {
namespace {

using nlohmann::json;

/// Typed, path-aware access to one JSON object; unknown keys are errors.
class Section {
 public:
  Section(const json& doc, std::string path, std::set<std::string> allowed)
      : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) fail(path_, "expected an object");
    for (const auto& [key, value] : doc_.items()) {
      if (!allowed.contains(key)) fail(name(key), "unknown field");
    }
  }

  bool has(const std::string& key) const { return doc_.contains(key); }

  const json& at(const std::string& key) const {
    if (!has(key)) fail(name(key), "missing required field");
    return doc_.at(key);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double real(const std::string& key, double fallback, bool required = false) const {
    if (!has(key)) {
      if (required) fail(name(key), "missing required field");
      return fallback;
    }
    const json& v = doc_.at(key);
    if (!v.is_number()) fail(name(key), "expected a number");
    return v.get<double>();
  }

  long integer(const std::string& key, long fallback, long minimum, bool required = false) const {
    if (!has(key)) {
      if (required) fail(name(key), "missing required field");
      return fallback;
    }
    const json& v = doc_.at(key);
    if (!v.is_number_integer() || v.get<long>() < minimum)
      fail(name(key), "expected an integer >= " + std::to_string(minimum));
    return v.get<long>();
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_boolean()) fail(name(key), "expected true or false");
    return v.get<bool>();
  }

  std::string choice(const std::string& key, const std::string& fallback,
                     std::initializer_list<const char*> options, bool required = false) const {
    if (!has(key)) {
      if (required) fail(name(key), "missing required field");
      return fallback;
    }
    const json& v = doc_.at(key);
    std::string listed;
    for (const char* option : options) listed += std::string(listed.empty() ? "" : ", ") + option;
    if (!v.is_string()) fail(name(key), "expected one of: " + listed);
    const auto value = v.get<std::string>();
    for (const char* option : options)
      if (value == option) return value;
    fail(name(key), "'" + value + "' is not one of: " + listed);
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
  }

 private:
  const json& doc_;
  std::string path_;
};

void check_open(double value, const std::string& where) {
  if (!(value > 0.0 && value < 1.0)) Section::fail(where, "must lie in the open interval (0,1)");
}

std::pair<long, long> line_and_column(const std::string& text, std::size_t byte) {
  long line = 1, column = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  std::filesystem::path p(value);
  return p.is_absolute() ? p : base / p;
}

EnvironmentSpec parse_environment(const json& doc, const std::filesystem::path& base) {
  Section env(doc, "environment",
              {"type", "grid_size", "slip_prob", "discount", "n_states", "n_actions", "seed", "sparsity",
               "slip", "path"});
  EnvironmentSpec spec;
  spec.type = env.choice("type", "", {"deepsea", "random", "chain", "file"}, true);
  if (spec.type == "deepsea") {
    spec.deepsea.grid_size = env.integer("grid_size", 8, 1);
    spec.deepsea.slip_prob = env.real("slip_prob", 0.05);
    spec.deepsea.discount = env.real("discount", 0.99);
    if (spec.deepsea.slip_prob < 0.0 || spec.deepsea.slip_prob > 0.5)
      Section::fail("environment.slip_prob", "must lie in [0, 0.5]");
    check_open(spec.deepsea.discount, "environment.discount");
    spec.discount = spec.deepsea.discount;
  } else if (spec.type == "random") {
    spec.n_states = env.integer("n_states", 0, 1, true);
    spec.n_actions = env.integer("n_actions", 0, 1, true);
    spec.seed = static_cast<std::uint64_t>(env.integer("seed", 0, 0));
    spec.sparsity = env.real("sparsity", 0.0);
    spec.discount = env.real("discount", 0.9);
    if (spec.sparsity < 0.0 || spec.sparsity >= 1.0) Section::fail("environment.sparsity", "must lie in [0,1)");
    check_open(spec.discount, "environment.discount");
  } else if (spec.type == "chain") {
    spec.n_states = env.integer("n_states", 0, 2, true);
    spec.discount = env.real("discount", 0.9);
    spec.slip = env.real("slip", 0.0);
    check_open(spec.discount, "environment.discount");
    if (spec.slip < 0.0 || spec.slip > 0.5) Section::fail("environment.slip", "must lie in [0, 0.5]");
  } else {
    const json& p = env.at("path");
    if (!p.is_string()) Section::fail("environment.path", "expected a string");
    spec.path = resolve(base, p.get<std::string>());
  }
  return spec;
}

EstimatorSpec parse_estimator(const json& doc) {
  Section est(doc, "algorithm.estimator", {"m", "m_leaf", "horizon", "epsilon", "delta", "threads"});
  EstimatorSpec spec;
  if (est.has("epsilon")) {
    spec.epsilon = est.real("epsilon", 0.0);
    if (!(*spec.epsilon > 0.0)) Section::fail("algorithm.estimator.epsilon", "must be positive");
    spec.delta = est.real("delta", 0.1);
    check_open(spec.delta, "algorithm.estimator.delta");
  } else {
    spec.m = est.integer("m", 0, 1, true);
    spec.m_leaf = est.integer("m_leaf", 0, 1, true);
    spec.horizon = est.integer("horizon", 0, 1, true);
  }
  spec.n_threads = static_cast<int>(est.integer("threads", 1, 1));
  return spec;
}

FeatureSpec parse_features(const json& doc, const std::filesystem::path& base) {
  Section feat(doc, "algorithm.features",
               {"type", "row_blocks", "col_blocks", "path", "eps_kw", "measure_eps_pi"});
  FeatureSpec spec;
  spec.type = feat.choice("type", "", {"one_hot", "deepsea_tiles", "file"}, true);
  spec.row_blocks = feat.integer("row_blocks", 8, 1);
  spec.col_blocks = feat.integer("col_blocks", 4, 1);
  spec.eps_kw = feat.real("eps_kw", 0.01);
  if (!(spec.eps_kw > 0.0)) Section::fail("algorithm.features.eps_kw", "must be positive");
  spec.measure_eps_pi = feat.flag("measure_eps_pi", false);
  if (spec.type == "file") {
    const json& p = feat.at("path");
    if (!p.is_string()) Section::fail("algorithm.features.path", "expected a string");
    spec.path = resolve(base, p.get<std::string>());
  }
  return spec;
}

std::string csv_number(double value) { return format_double(value); }

struct Moments {
  double mean = 0;
  double std = 0;
};

/// Mean and population standard deviation, summed in input order.
Moments moments(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, column] = line_and_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(column) +
                      ": syntax error");
  }
  Section root(doc, "", {"environment", "algorithm", "sweep", "output", "jobs"});
  ExperimentConfig config;
  config.environment = parse_environment(root.at("environment"), base_dir);

  Section alg(root.at("algorithm"), "algorithm",
              {"kind", "mirror", "schedule", "stepsize_scope", "n_iters", "gap_tolerance", "record_bounds",
               "estimator", "features"});
  const auto kind = alg.choice("kind", "exact", {"exact", "inexact", "fa"});
  config.algorithm = kind == "exact" ? AlgorithmKind::Exact
                     : kind == "inexact" ? AlgorithmKind::Inexact
                                         : AlgorithmKind::LinearFA;
  config.mirror = alg.choice("mirror", "kl", {"kl", "euclidean"}) == "kl" ? MirrorMap::NegativeEntropy
                                                                        : MirrorMap::SquaredEuclidean;
  const auto schedule = alg.choice("schedule", "per_h", {"per_h", "shared", "infinite"});
  config.schedule = schedule == "per_h"    ? ScheduleVariant::PerH
                    : schedule == "shared" ? ScheduleVariant::Shared
                                           : ScheduleVariant::Infinite;
  config.scope = alg.choice("stepsize_scope", "uniform", {"uniform", "per_state"}) == "uniform"
                     ? StepsizeScope::Uniform
                     : StepsizeScope::PerState;
  config.n_iters = alg.integer("n_iters", 0, 1, true);
  config.gap_tolerance = alg.real("gap_tolerance", 0.0);
  if (config.gap_tolerance < 0.0) Section::fail("algorithm.gap_tolerance", "must be nonnegative");
  config.record_bounds = alg.flag("record_bounds", true);
  if (config.algorithm != AlgorithmKind::Exact) config.estimator = parse_estimator(alg.at("estimator"));
  if (config.algorithm == AlgorithmKind::LinearFA) {
    config.features = parse_features(alg.at("features"), base_dir);
    if (config.features.type == "deepsea_tiles" && config.environment.type != "deepsea")
      Section::fail("algorithm.features.type", "deepsea_tiles needs a deepsea environment");
  }

  Section sweep(root.at("sweep"), "sweep", {"h", "seeds"});
  const json& hs = sweep.at("h");
  if (!hs.is_array() || hs.empty()) Section::fail("sweep.h", "expected a nonempty list of integers >= 1");
  config.h_values.clear();
  for (const json& h : hs) {
    if (!h.is_number_integer() || h.get<long>() < 1)
      Section::fail("sweep.h", "expected a nonempty list of integers >= 1");
    config.h_values.push_back(h.get<int>());
  }
  config.seeds.clear();
  if (sweep.has("seeds")) {
    const json& seeds = sweep.at("seeds");
    if (!seeds.is_array() || seeds.empty())
      Section::fail("sweep.seeds", "expected a nonempty list of integers >= 0");
    for (const json& s : seeds) {
      if (!s.is_number_integer() || s.get<long long>() < 0)
        Section::fail("sweep.seeds", "expected a nonempty list of integers >= 0");
      config.seeds.push_back(s.get<std::uint64_t>());
    }
  } else {
    config.seeds = {0};
  }

  if (root.has("output")) {
    Section out(root.at("output"), "output", {"dir", "threshold", "timing"});
    if (out.has("dir")) {
      if (!out.at("dir").is_string()) Section::fail("output.dir", "expected a string");
      config.output_dir = resolve(base_dir, out.at("dir").get<std::string>());
    } else {
      config.output_dir = base_dir / "results";
    }
    config.threshold = out.real("threshold", 1e-3);
    if (!(config.threshold > 0.0)) Section::fail("output.threshold", "must be positive");
    config.timing = out.flag("timing", false);
  } else {
    config.output_dir = base_dir / "results";
  }
  config.jobs = static_cast<int>(root.integer("jobs", 1, 1));
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot read config file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.has_parent_path() ? path.parent_path() : ".");
}

TabularMdp<double> build_environment(const EnvironmentSpec& spec) {
  if (spec.type == "deepsea") return build_deepsea<double>(spec.deepsea);
  if (spec.type == "random")
    return build_random_mdp<double>(spec.n_states, spec.n_actions, spec.seed, spec.sparsity, spec.discount);
  if (spec.type == "chain") return build_chain<double>(spec.n_states, spec.discount, spec.slip);
  if (spec.type == "file") return load_mdp(spec.path);
  throw InvalidArgument("unknown environment type '" + spec.type + "'");
}

StepsizeSchedule<double> make_schedule(ScheduleVariant variant, double gamma, int h) {
  switch (variant) {
    case ScheduleVariant::PerH:
      return StepsizeSchedule<double>::per_depth(gamma, h);
    case ScheduleVariant::Shared:
      return StepsizeSchedule<double>::shared(gamma);
    case ScheduleVariant::Infinite:
      break;
  }
  return StepsizeSchedule<double>::infinite();
}

EstimatorParams make_estimator(const EstimatorSpec& spec, double gamma, int h, Index n_actions,
                               Index n_queries) {
  EstimatorParams params;
  if (spec.epsilon) {
    params = params_for_accuracy(gamma, h, *spec.epsilon, spec.delta, n_actions, n_queries).params;
  } else {
    params = EstimatorParams::uniform(h, spec.m, spec.m_leaf, spec.horizon);
  }
  params.n_threads = spec.n_threads;
  return params;
}

void write_run_csv(std::ostream& out, const IterateTrace<double>& trace) {
  out << "iteration,gap,bound,eta,c_k,samples_iter,samples_cum,wall_ms\n";
  for (const auto& r : trace.records) {
    out << r.iteration << ',' << csv_number(r.gap) << ',' << csv_number(r.bound) << ','
        << csv_number(r.eta) << ',' << csv_number(r.c_k) << ',' << r.samples_iter << ',' << r.samples_cum
        << ',' << csv_number(r.wall_ms) << '\n';
  }
}

void write_aggregate_csv(std::ostream& out, const std::vector<RunResult>& runs) {
  out << "h,iteration,n_runs,gap_mean,gap_std,bound_mean,samples_cum_mean,samples_cum_std\n";
  std::map<int, std::vector<const RunResult*>> by_h;
  for (const auto& run : runs) by_h[run.h].push_back(&run);
  for (const auto& [h, group] : by_h) {
    std::size_t longest = 0;
    for (const auto* run : group) longest = std::max(longest, run->trace.records.size());
    for (std::size_t i = 0; i < longest; ++i) {
      std::vector<double> gaps, bounds, samples;
      for (const auto* run : group) {
        if (i >= run->trace.records.size()) continue;
        const auto& r = run->trace.records[i];
        gaps.push_back(r.gap);
        bounds.push_back(r.bound);
        samples.push_back(static_cast<double>(r.samples_cum));
      }
      const auto g = moments(gaps);
      const auto s = moments(samples);
      out << h << ',' << i + 1 << ',' << gaps.size() << ',' << csv_number(g.mean) << ','
          << csv_number(g.std) << ',' << csv_number(moments(bounds).mean) << ',' << csv_number(s.mean)
          << ',' << csv_number(s.std) << '\n';
    }
  }
}

void write_summary_csv(std::ostream& out, const std::vector<RunResult>& runs, double threshold) {
  out << "h,n_runs,n_reached,iterations_to_threshold_mean,iterations_to_threshold_std,"
         "samples_to_threshold_mean,samples_to_threshold_std\n";
  std::map<int, std::vector<const RunResult*>> by_h;
  for (const auto& run : runs) by_h[run.h].push_back(&run);
  for (const auto& [h, group] : by_h) {
    std::vector<double> iterations, samples;
    for (const auto* run : group) {
      for (const auto& r : run->trace.records) {
        if (r.gap <= threshold) {
          iterations.push_back(static_cast<double>(r.iteration));
          samples.push_back(static_cast<double>(r.samples_cum));
          break;
        }
      }
    }
    const bool all = iterations.size() == group.size();
    const auto it = moments(iterations);
    const auto sm = moments(samples);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    // Means over runs that never reached the threshold would be misleading.
    out << h << ',' << group.size() << ',' << iterations.size() << ',' << csv_number(all ? it.mean : nan)
        << ',' << csv_number(all ? it.std : nan) << ',' << csv_number(all ? sm.mean : nan) << ','
        << csv_number(all ? sm.std : nan) << '\n';
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::atomic<bool>* stop) {
  const TabularMdp<double> mdp = build_environment(config.environment);
  const TabularModel<double> model(mdp);
  const double gamma = mdp.discount();

  std::optional<FeatureMap<double>> features;
  std::optional<DesignSet<double>> design;
  if (config.algorithm == AlgorithmKind::LinearFA) {
    const auto& fs = config.features;
    if (fs.type == "one_hot") {
      features.emplace(one_hot_features<double>(mdp.n_states(), mdp.n_actions()));
    } else if (fs.type == "deepsea_tiles") {
      features.emplace(mdp.n_states(), mdp.n_actions(),
                       deepsea_tile_features<double>(config.environment.deepsea, fs.row_blocks, fs.col_blocks));
    } else {
      features.emplace(load_features(fs.path));
    }
    if (features->n_states() != mdp.n_states() || features->n_actions() != mdp.n_actions())
      throw ConfigError("algorithm.features: feature shape does not match the environment");
    design.emplace(compute_design(*features, all_state_actions(mdp.n_states(), mdp.n_actions()), fs.eps_kw));
  }

  std::filesystem::create_directories(config.output_dir);
  struct Cell {
    int h;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (int h : config.h_values)
    for (std::uint64_t seed : config.seeds) cells.push_back({h, seed});

  ExperimentResult result;
  result.runs.resize(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;

  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      if (stop && stop->load()) return;
      const Cell cell = cells[i];
      try {
        RunConfig<double> rc;
        rc.h = cell.h;
        rc.n_iters = config.n_iters;
        rc.mirror = config.mirror;
        rc.schedule = make_schedule(config.schedule, gamma, cell.h);
        rc.schedule.scope = config.scope;
        rc.seed = cell.seed;
        rc.record_bounds = config.record_bounds;
        rc.gap_tolerance = config.gap_tolerance;
        rc.timing = config.timing;
        if (stop) rc.on_iteration = [stop](const IterationRecord<double>&) { return !stop->load(); };
        const auto pi0 = Policy<double>::uniform(mdp.n_states(), mdp.n_actions());

        RunResult run;
        run.h = cell.h;
        run.seed = cell.seed;
        if (config.algorithm == AlgorithmKind::Exact) {
          run.trace = run_exact(mdp, rc, pi0).second;
        } else {
          rc.mode = RunMode::Inexact;
          const Index n_queries = config.algorithm == AlgorithmKind::Inexact
                                      ? mdp.n_states() * mdp.n_actions()
                                      : static_cast<Index>(design->core.size());
          rc.estimator = make_estimator(config.estimator, gamma, cell.h, mdp.n_actions(), n_queries);
          if (config.algorithm == AlgorithmKind::Inexact) {
            run.trace = run_inexact(model, rc, pi0, &mdp).second;
          } else {
            run.trace = run_fa(model, *features, *design, rc, pi0, &mdp, config.features.measure_eps_pi)
                            .second.trace;
          }
        }
        run.csv = config.output_dir /
                  ("run_h" + std::to_string(cell.h) + "_seed" + std::to_string(cell.seed) + ".csv");
        std::ofstream out(run.csv);
        write_run_csv(out, run.trace);
        result.runs[i] = std::move(run);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(cells.size())));
  if (jobs == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);

  // Drop cells that never started.
  std::erase_if(result.runs, [](const RunResult& run) { return run.csv.empty(); });
  result.interrupted = stop && stop->load();
  result.aggregate_csv = config.output_dir / "aggregate.csv";
  result.summary_csv = config.output_dir / "summary.csv";
  {
    std::ofstream out(result.aggregate_csv);
    write_aggregate_csv(out, result.runs);
  }
  {
    std::ofstream out(result.summary_csv);
    write_summary_csv(out, result.runs, config.threshold);
  }
  return result;
}

}  // namespace hpmd
