#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nlpscm/ci_test.hpp"
#include "nlpscm/dataset.hpp"
#include "nlpscm/graph.hpp"

namespace nlpscm {

/// Separating sets found by CI successes, keyed by unordered pair.
using SepsetTable = std::map<PairKey, std::vector<int>>;

struct FciConfig {
  double alpha = 0.1;
  /// Largest conditioning set. nullopt picks unbounded for at most ten
  /// variables and 3 otherwise; a negative value is unbounded.
  std::optional<int> max_depth;
  /// nullopt enables the possible-d-sep phase for at most ten variables.
  std::optional<bool> possible_dsep;
  /// Adds R5-R10 to the core R1-R4 orientation rules.
  bool extended_rules = false;
};

struct FciResult {
  Pag pag;
  SepsetTable sepsets;
  std::size_t ci_calls = 0;
};

/// Runs FCI over the test's variables. Background facts other than NoEdge are
/// never removed from the skeleton and their marks are locked against the
/// orientation rules.
FciResult fci_detailed(const CiTest& test, const BackgroundKnowledge& background, const FciConfig& cfg);
Pag fci(const CiTest& test, const BackgroundKnowledge& background, const FciConfig& cfg);

/// Applies the enabled orientation rules until nothing changes. `locked`
/// marks pairs whose endpoints must not be modified. Returns the number of
/// marks changed.
std::size_t apply_orientation_rules(Pag& pag, const SepsetTable& sepsets, const std::vector<bool>& locked,
                                    bool extended);

enum class FciVariant { Cumulative, Vanilla, Iterative, Heuristics };

std::string_view to_string(FciVariant v);
std::optional<FciVariant> variant_from_string(std::string_view text);

using CiTestFactory = std::function<std::unique_ptr<CiTest>(const BatchDataset&)>;

struct VariantRun {
  std::vector<Pag> pags;
  std::vector<std::string> warnings;
};

/// Sequential FCI baselines. Heuristics mode promotes a category once it has
/// appeared in at least `h` of this run's previous outputs. An empty batch is
/// skipped with a warning and the previous PAG is carried forward.
VariantRun run_fci_variant(FciVariant mode, const std::vector<BatchDataset>& batches, const FciConfig& cfg,
                           int h = 2, const CiTestFactory& factory = {});

}  // namespace nlpscm
