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

#include "hpmd/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hpmd {
namespace {

using nlohmann::json;

const json& field(const json& doc, const char* name) {
  if (!doc.is_object() || !doc.contains(name)) throw FormatError(std::string("missing field '") + name + "'");
  return doc.at(name);
}

template <typename T>
T number(const json& value, const std::string& where) {
  if (!value.is_number()) throw FormatError(where + ": expected a number");
  return value.get<T>();
}

}  // namespace

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

std::string mdp_to_json(const TabularMdp<double>& mdp) {
  json doc;
  doc["n_states"] = mdp.n_states();
  doc["n_actions"] = mdp.n_actions();
  doc["discount"] = mdp.discount();
  json reward = json::array();
  for (Index s = 0; s < mdp.n_states(); ++s) {
    json row = json::array();
    for (Index a = 0; a < mdp.n_actions(); ++a) row.push_back(mdp.reward(s, a));
    reward.push_back(std::move(row));
  }
  doc["reward"] = std::move(reward);
  json transitions = json::array();
  const auto& P = mdp.transition();
  for (Index row = 0; row < P.outerSize(); ++row) {
    for (SparseMatrix<double>::InnerIterator it(P, row); it; ++it) {
      if (it.value() == 0.0) continue;
      transitions.push_back({row / mdp.n_actions(), row % mdp.n_actions(), it.col(), it.value()});
    }
  }
  doc["transitions"] = std::move(transitions);
  doc["initial_dist"] = std::vector<double>(mdp.initial_dist().data(),
                                            mdp.initial_dist().data() + mdp.n_states());
  return doc.dump(1);
}

TabularMdp<double> mdp_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
  const auto S = number<Index>(field(doc, "n_states"), "n_states");
  const auto A = number<Index>(field(doc, "n_actions"), "n_actions");
  const auto gamma = number<double>(field(doc, "discount"), "discount");
  if (S < 1 || A < 1) throw FormatError("n_states and n_actions must be at least 1");

  const json& reward_doc = field(doc, "reward");
  if (!reward_doc.is_array() || static_cast<Index>(reward_doc.size()) != S)
    throw FormatError("reward: expected " + std::to_string(S) + " rows");
  Matrix<double> reward(S, A);
  for (Index s = 0; s < S; ++s) {
    const json& row = reward_doc[static_cast<std::size_t>(s)];
    if (!row.is_array() || static_cast<Index>(row.size()) != A)
      throw FormatError("reward[" + std::to_string(s) + "]: expected " + std::to_string(A) + " entries");
    for (Index a = 0; a < A; ++a)
      reward(s, a) = number<double>(row[static_cast<std::size_t>(a)],
                                    "reward[" + std::to_string(s) + "][" + std::to_string(a) + "]");
  }

  const json& transitions = field(doc, "transitions");
  if (!transitions.is_array()) throw FormatError("transitions: expected an array");
  std::vector<Eigen::Triplet<double>> entries;
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    const json& t = transitions[i];
    const std::string where = "transitions[" + std::to_string(i) + "]";
    if (!t.is_array() || t.size() != 4) throw FormatError(where + ": expected [s, a, s_next, p]");
    const auto s = number<Index>(t[0], where);
    const auto a = number<Index>(t[1], where);
    const auto next = number<Index>(t[2], where);
    if (s < 0 || s >= S || a < 0 || a >= A || next < 0 || next >= S)
      throw FormatError(where + ": index out of range");
    entries.emplace_back(s * A + a, next, number<double>(t[3], where));
  }
  SparseMatrix<double> P(S * A, S);
  P.setFromTriplets(entries.begin(), entries.end());

  Vector<double> start = Vector<double>::Constant(S, 1.0 / static_cast<double>(S));
  if (doc.contains("initial_dist")) {
    const json& init = doc.at("initial_dist");
    if (!init.is_array() || static_cast<Index>(init.size()) != S)
      throw FormatError("initial_dist: expected " + std::to_string(S) + " entries");
    for (Index s = 0; s < S; ++s) start(s) = number<double>(init[static_cast<std::size_t>(s)], "initial_dist");
  }
  try {
    return TabularMdp<double>(S, A, std::move(P), std::move(reward), gamma, std::move(start));
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
}

void save_mdp(const TabularMdp<double>& mdp, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << mdp_to_json(mdp) << '\n';
}

TabularMdp<double> load_mdp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return mdp_from_json(buffer.str());
}

FeatureMap<double> read_features(std::istream& in) {
  std::string line;
  long line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      return true;
    }
    return false;
  };
  if (!next_line()) throw FormatError("features: missing header 'S A d'");
  Index S = 0, A = 0, d = 0;
  {
    std::istringstream header(line);
    if (!(header >> S >> A >> d) || S < 1 || A < 1 || d < 1)
      throw FormatError("features line " + std::to_string(line_no) + ": bad header, expected 'S A d'");
  }
  Matrix<double> psi(S * A, d);
  for (Index row = 0; row < S * A; ++row) {
    if (!next_line()) throw FormatError("features: expected " + std::to_string(S * A) + " rows");
    std::istringstream fields(line);
    for (Index j = 0; j < d; ++j) {
      if (!(fields >> psi(row, j)))
        throw FormatError("features line " + std::to_string(line_no) + ": expected " +
                          std::to_string(d) + " numbers");
    }
  }
  try {
    return FeatureMap<double>(S, A, std::move(psi));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("features: ") + e.what());
  }
}

FeatureMap<double> load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  return read_features(in);
}

void write_features(std::ostream& out, const FeatureMap<double>& features) {
  out << features.n_states() << ' ' << features.n_actions() << ' ' << features.dim() << '\n';
  const auto& psi = features.matrix();
  for (Index row = 0; row < psi.rows(); ++row) {
    for (Index j = 0; j < psi.cols(); ++j) out << (j ? " " : "") << format_double(psi(row, j));
    out << '\n';
  }
}

}  // namespace hpmd
