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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string command = std::string("\"") + HPMD_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const std::string& name, const std::string& text) {
  const auto dir = fs::temp_directory_path() / "hpmd_cli_test";
  fs::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << text;
  return path;
}

const char* kGood = R"({"environment": {"type": "chain", "n_states": 4},
                        "algorithm": {"n_iters": 2}, "sweep": {"h": [1, 2]}})";

}  // namespace

TEST_CASE("cli exit codes") {
  const auto good = write_config("good.json", kGood);
  const auto out = fs::temp_directory_path() / "hpmd_cli_test" / "out";
  fs::remove_all(out);
  CHECK(run_cli("validate -c " + good.string()) == 0);
  CHECK(run_cli("run -c " + good.string() + " -o " + out.string()) == 0);
  CHECK(fs::exists(out / "run_h2_seed0.csv"));
  CHECK(fs::exists(out / "summary.csv"));

  const auto bad = write_config("bad.json", R"({"environment": {"type": "chain"}, "sweep": {"h": [1]}})");
  CHECK(run_cli("validate -c " + bad.string()) == 1);
  CHECK(run_cli("run -c " + bad.string()) == 1);
  CHECK(run_cli("run -c /nonexistent/config.json") == 1);
  CHECK(run_cli("frobnicate") == 1);

  // A file environment pointing nowhere fails at run time.
  const auto missing = write_config("missing.json", R"({"environment": {"type": "file", "path": "nowhere.json"},
                                                      "algorithm": {"n_iters": 2}, "sweep": {"h": [1]}})");
  CHECK(run_cli("run -c " + missing.string() + " -o " + out.string()) == 2);
}

TEST_CASE("cli exports MDPs and honours the output directory variable") {
  const auto good = write_config("export.json", kGood);
  const auto mdp = fs::temp_directory_path() / "hpmd_cli_test" / "chain.json";
  CHECK(run_cli("export-mdp -c " + good.string() + " -o " + mdp.string()) == 0);
  CHECK(fs::file_size(mdp) > 0);

  const auto file_env = write_config("from_file.json", R"({"environment": {"type": "file", "path": "chain.json"},
                                                        "algorithm": {"n_iters": 2}, "sweep": {"h": [1]}})");
  const auto env_out = fs::temp_directory_path() / "hpmd_cli_test" / "env_out";
  fs::remove_all(env_out);
  CHECK(std::system(("HPMD_OUTPUT_DIR=\"" + env_out.string() + "\" \"" + HPMD_CLI_PATH + "\" run -c " +
                     file_env.string() + " >/dev/null 2>&1")
                        .c_str()) == 0);
  CHECK(fs::exists(env_out / "run_h1_seed0.csv"));
}
