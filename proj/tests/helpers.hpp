#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nlpscm/graph.hpp"
#include "oracles.hpp"

namespace testing {

using NamedEdge = std::pair<std::string, std::string>;

inline nlpscm::Dag make_dag(const std::vector<std::string>& names, const std::vector<NamedEdge>& edges,
                            const std::vector<std::string>& latents = {}) {
  auto idx = [&](const std::string& n) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == n) return static_cast<int>(i);
    }
    throw std::runtime_error("no node " + n);
  };
  std::vector<nlpscm::Dag::Edge> es;
  for (const auto& [a, b] : edges) es.push_back({idx(a), idx(b), 1.0});
  std::vector<bool> lat(names.size(), false);
  for (const auto& l : latents) lat[static_cast<std::size_t>(idx(l))] = true;
  return nlpscm::Dag(names, std::move(es), false, std::move(lat));
}

inline nlpscm::Dag to_dag(const oracle::Digraph& g) {
  std::vector<std::string> names;
  for (int i = 0; i < g.n; ++i) names.push_back("X" + std::to_string(i));
  std::vector<nlpscm::Dag::Edge> es;
  for (const auto& [a, b] : g.edges) es.push_back({a, b, 1.0});
  return nlpscm::Dag(names, std::move(es), false);
}

inline nlpscm::Pag pag_of(const std::vector<std::string>& names, const std::string& body) {
  std::string text = "nodes";
  for (const auto& n : names) text += " " + n;
  return nlpscm::parse_pag(text + "\n" + body);
}

}  // namespace testing
