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

#include <filesystem>
#include <iosfwd>
#include <string>

#include "hpmd/linfa.hpp"

namespace hpmd {

/// Raised for malformed input files; the message names the offending field.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// MDP JSON document:
///   {"n_states": S, "n_actions": A, "discount": g,
///    "reward": [[r(0,0), ..., r(0,A-1)], ...],          // S rows
///    "transitions": [[s, a, s_next, p], ...],           // nonzero entries
///    "initial_dist": [...]}                             // optional, length S
std::string mdp_to_json(const TabularMdp<double>& mdp);
TabularMdp<double> mdp_from_json(const std::string& text);
void save_mdp(const TabularMdp<double>& mdp, const std::filesystem::path& path);
TabularMdp<double> load_mdp(const std::filesystem::path& path);

/// Feature matrix text file: a header line "S A d" followed by S*A lines of d
/// numbers, row s*A + a holding psi(s, a). Blank lines and lines starting with
/// '#' are ignored.
FeatureMap<double> read_features(std::istream& in);
FeatureMap<double> load_features(const std::filesystem::path& path);
void write_features(std::ostream& out, const FeatureMap<double>& features);

/// Shortest decimal form that reads back to the same double; "nan"/"inf" for
/// non-finite values.
std::string format_double(double value);

}  // namespace hpmd
