#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlpscm/belief.hpp"
#include "nlpscm/dataset.hpp"
#include "nlpscm/expert.hpp"
#include "nlpscm/fci.hpp"
#include "nlpscm/graph.hpp"
#include "nlpscm/metrics.hpp"

namespace nlpscm {

struct LearnerState {
  std::vector<std::string> variables;
  EdgeHistogram edges;
  LatentHistogram latents;
  BackgroundKnowledge background;
  int batch = 0;
  /// Last FCI output, carried forward over empty batches.
  std::optional<Pag> discovered;

  friend bool operator==(const LearnerState&, const LearnerState&) = default;
};

enum class Selection { Score, Random };

struct RunConfig {
  int edge_budget = 50;        // m^E
  int confounder_budget = 0;   // m^L
  ScoreWeights weights;
  FciConfig fci;
  ExpertConfig expert;
  std::uint64_t seed = 0;
  Selection selection = Selection::Score;
  /// Replaces the dynamic threshold by a constant (ablation).
  std::optional<double> fixed_threshold;
};

struct Promotion {
  std::string a;
  std::string b;
  EdgeCategory category;
};

struct EdgeQuery {
  std::string a;
  std::string b;
  double score = 0.0;
  std::optional<EdgeCategory> answer;
  std::optional<std::string> error;
  std::vector<Promotion> promotions;
};

struct ConfounderQuery {
  std::string a;
  std::string b;
  std::optional<std::string> name;
  std::optional<std::string> error;
};

struct BatchTrace {
  int batch = 0;
  std::vector<EdgeQuery> edge_queries;
  std::vector<ConfounderQuery> confounder_queries;
};

struct BatchOutcome {
  LearnerState state;
  Pag discovered;  // G^D
  Pag refined;     // G^E
  BatchTrace trace;
};

/// Effective promotion threshold of a queried pair under the run's settings.
double pair_threshold(const EdgeHistogram& hist, PairKey pair, const RunConfig& cfg);
/// Selection score of a pair; +infinity when it was never queried.
double pair_score(const EdgeHistogram& hist, PairKey pair, const RunConfig& cfg);

/// One iteration of the refinement loop: FCI under the current background,
/// up to m^E edge queries, up to m^L confounder queries over promoted
/// bidirected pairs, and the background override of the FCI graph.
/// Expert failures consume budget and are recorded; authentication failures
/// are rethrown. An empty batch skips FCI and reuses the previous G^D (an
/// empty graph on the first batch); the expert loop still runs.
BatchOutcome run_batch(LearnerState state, const BatchDataset& data, const RunConfig& cfg, Expert& expert);

struct BatchReport {
  int batch = 0;
  Pag discovered;
  Pag refined;
  std::optional<MetricReport> metrics;
  std::optional<double> mean_entropy;
  BatchTrace trace;
  BackgroundKnowledge background;
  EdgeHistogram edges;
  LatentHistogram latents;
};

struct SequenceReport {
  std::vector<std::string> variables;
  std::vector<BatchReport> batches;
  LearnerState final_state;
  std::vector<std::string> warnings;
};

SequenceReport run_sequence(const std::vector<BatchDataset>& batches, const RunConfig& cfg, Expert& expert,
                            const std::optional<Dag>& truth = std::nullopt);

inline constexpr int kReportSchemaVersion = 1;

nlohmann::ordered_json to_json(const BatchTrace& trace);
nlohmann::ordered_json to_json(const BackgroundKnowledge& background, const std::vector<std::string>& names);
nlohmann::ordered_json to_json(const SequenceReport& report);

}  // namespace nlpscm
