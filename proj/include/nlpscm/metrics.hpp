#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlpscm/graph.hpp"

namespace nlpscm {

/// Missing or extra adjacency costs 1. On shared adjacencies each endpoint
/// costs 1 for tail vs arrow and 0.5 for any mismatch involving a circle.
/// Throws InvalidArgument when the variable lists differ.
double mod_shd(const Pag& pred, const Pag& truth);
/// Truth given as a DAG is compared through its exact PAG over observed nodes.
double mod_shd(const Pag& pred, const Dag& truth);

struct DirectedScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Scores over directed edges only; empty denominators give 0.
DirectedScores directed_prf(const Pag& pred, const Dag& truth);

struct SidBounds {
  long lower = 0;
  long upper = 0;
};

inline constexpr std::size_t kSidExtensionCap = 4096;

/// DAG extensions of a PAG: each circle takes a tail or an arrow, a tail-tail
/// edge takes either direction, and edges ending with two arrows are dropped.
/// Only acyclic extensions are returned. Throws InvalidArgument when the raw
/// number of candidates exceeds `cap`.
std::vector<Dag> dag_extensions(const Pag& pred, std::size_t cap = kSidExtensionCap);

/// Number of ordered pairs (x, y) for which the parents of x in `pred` do not
/// identify the effect of x on y in `truth`. `pred` is over the observed
/// variables of `truth`.
long sid(const Dag& pred, const Dag& truth);

/// Min and max of sid over the DAG extensions of `pred`. Throws
/// InvalidArgument when no acyclic extension exists or the cap is exceeded.
SidBounds sid_bounds(const Pag& pred, const Dag& truth, std::size_t cap = kSidExtensionCap);

struct MetricReport {
  double mod_shd = 0.0;
  std::optional<SidBounds> sid;
  std::optional<std::string> sid_error;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> mean_entropy;
};

/// All metrics of `pred` against `truth`. SID failures are reported in
/// `sid_error` rather than thrown.
MetricReport evaluate(const Pag& pred, const Dag& truth, std::optional<double> mean_entropy = std::nullopt);

std::vector<double> entropy_trace(const std::vector<MetricReport>& reports);

nlohmann::ordered_json to_json(const MetricReport& report);

}  // namespace nlpscm
