#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "nlpscm/em.hpp"
#include "nlpscm/error.hpp"
#include "nlpscm/expert.hpp"
#include "nlpscm/fci.hpp"
#include "nlpscm/learner.hpp"
#include "nlpscm/metrics.hpp"
#include "nlpscm/sem.hpp"

namespace nlpscm::cli {

/// Bad flags, bad config, or a missing input file.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kExternal = 3 };

int exit_code_for(const std::exception& e);

struct ExperimentConfig {
  std::string profile;
  std::string fixture;
  std::string truth_file;                // DAG JSON
  std::vector<std::string> batch_files;  // used instead of simulating the fixture
  std::vector<Eigen::Index> batch_sizes;
  std::optional<SelectionBias> bias;
  RunConfig run;
  int heuristics_h = 2;
  EmConfig em;
  std::string graph_file;                // estimate: DAG JSON with latent flags
  std::vector<GaussianPrior> priors;
  std::map<std::string, double> rho;
  std::string params_truth_file;         // SemParams JSON
  std::uint64_t seed = 0;
  int seeds = 1;
  std::string output = "out";
};

std::vector<std::string> profile_names();
/// Preset for a fixture profile; throws UsageError for unknown names.
ExperimentConfig profile(const std::string& name);

/// Applies `j` on top of its `profile` (if any). Unknown keys throw
/// UsageError. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::string& path);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

/// Stream-specific seed derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Batch files when configured, otherwise the fixture simulated with `seed`.
std::vector<BatchDataset> load_batches(const ExperimentConfig& cfg, std::uint64_t seed);
/// Truth DAG from `truth_file` or the fixture; nullopt when neither is set.
std::optional<Dag> load_truth(const ExperimentConfig& cfg);
std::unique_ptr<Expert> make_expert(const ExperimentConfig& cfg, const std::vector<std::string>& variables,
                                    const std::optional<Dag>& truth, std::uint64_t seed);

struct DiscoverRun {
  std::uint64_t seed = 0;
  nlohmann::ordered_json report;
  std::vector<Pag> pags;
  std::vector<std::optional<MetricReport>> metrics;
};

/// One seeded discover run; `variant` selects an FCI baseline instead of the learner.
DiscoverRun discover(const ExperimentConfig& cfg, std::optional<FciVariant> variant, std::uint64_t seed);

/// Writes batch CSVs, truth.json and manifest.json.
void cmd_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out);
/// Writes report.json, pags/, metrics.csv and manifest.json, one directory per
/// seed when cfg.seeds > 1.
void cmd_discover(const ExperimentConfig& cfg, std::optional<FciVariant> variant, const std::filesystem::path& out);
/// Writes params_prior_<k>.json and, with a truth, error_prior_<k>.csv per configured prior.
void cmd_estimate(const ExperimentConfig& cfg, const std::filesystem::path& out);
/// Predicted PAG text file against a DAG JSON file.
MetricReport cmd_evaluate(const std::string& pred_file, const std::string& truth_file);

struct ProbeRound {
  int shd = 0;
  double precision = 0.0;
  double recall = 0.0;
  int claimed = 0;  // pairs answered with any edge
  int failed = 0;   // pairs whose query raised an ExpertError
};

/// Pairwise prompting with no structural context: every pair is asked once
/// per round and the answers are read as a graph. Directed answers give an
/// oriented edge; other edge answers count as unoriented claims.
ProbeRound probe_round(Expert& expert, const Dag& truth);
/// Runs `rounds` probe rounds and writes probe.json.
nlohmann::ordered_json cmd_probe(const ExperimentConfig& cfg, int rounds, const std::filesystem::path& out);

std::string metrics_csv(const std::vector<std::optional<MetricReport>>& metrics);

SemParams params_from_json(const nlohmann::json& j);

}  // namespace nlpscm::cli
