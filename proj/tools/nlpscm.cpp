#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nlpscm/cli.hpp"

using namespace nlpscm;

namespace {

struct Common {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool with_seeds) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--profile", c.profile, "preset: earthquake, asia, user1, user2, wine_synth");
  cmd->add_option("--seed", c.seed, "run seed");
  if (with_seeds) cmd->add_option("--seeds", c.seeds, "number of seeds run concurrently, starting at --seed");
  cmd->add_option("--out", c.out, "output directory");
}

cli::ExperimentConfig resolve_config(const Common& c) {
  cli::ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = cli::load_config(c.config);
  } else if (!c.profile.empty()) {
    cfg = cli::profile(c.profile);
  } else {
    throw cli::UsageError("either --config or --profile is required");
  }
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.run.seed = *c.seed;
    cfg.em.seed = *c.seed;
  }
  if (c.seeds) {
    if (*c.seeds < 1) throw cli::UsageError("--seeds must be at least 1");
    cfg.seeds = *c.seeds;
  }
  if (!c.out.empty()) cfg.output = c.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential causal discovery with a noisy expert"};
  app.require_subcommand(1);

  Common sim_opts, disc_opts, est_opts;
  auto* sim = app.add_subcommand("simulate", "write simulated batch CSVs for a fixture");
  add_common(sim, sim_opts, false);

  auto* disc = app.add_subcommand("discover", "run the learner or an FCI baseline over the batches");
  add_common(disc, disc_opts, true);
  std::string variant;
  disc->add_option("--variant", variant, "FCI baseline: cumulative, vanilla, iterative, heuristics");

  auto* est = app.add_subcommand("estimate", "EM parameter estimation with a latent confounder");
  add_common(est, est_opts, false);

  Common probe_opts;
  int rounds = 5;
  auto* probe = app.add_subcommand("probe", "ask every pair once without context and score the answers as a graph");
  add_common(probe, probe_opts, false);
  probe->add_option("--rounds", rounds, "number of probe rounds");

  auto* eval = app.add_subcommand("evaluate", "score a predicted PAG against a truth DAG");
  std::string pred_file, truth_file, eval_out;
  eval->add_option("pred", pred_file, "predicted PAG text file")->required();
  eval->add_option("truth", truth_file, "truth DAG JSON file")->required();
  eval->add_option("--out", eval_out, "write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (*sim) {
      const auto cfg = resolve_config(sim_opts);
      cli::cmd_simulate(cfg, cfg.output);
      std::cerr << "wrote " << cfg.batch_sizes.size() << " batches to " << cfg.output << "\n";
    } else if (*disc) {
      const auto cfg = resolve_config(disc_opts);
      std::optional<FciVariant> v;
      if (!variant.empty()) {
        v = variant_from_string(variant);
        if (!v) throw cli::UsageError("unknown variant: " + variant);
      }
      cli::cmd_discover(cfg, v, cfg.output);
      std::cerr << "wrote report to " << cfg.output << "\n";
    } else if (*est) {
      const auto cfg = resolve_config(est_opts);
      cli::cmd_estimate(cfg, cfg.output);
      std::cerr << "wrote estimates to " << cfg.output << "\n";
    } else if (*probe) {
      const auto cfg = resolve_config(probe_opts);
      const auto j = cli::cmd_probe(cfg, rounds, cfg.output);
      std::cout << j["mean"].dump() << "\n";
    } else if (*eval) {
      const auto report = cli::cmd_evaluate(pred_file, truth_file);
      const auto text = to_json(report).dump(2) + "\n";
      if (eval_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(eval_out);
        if (!(out << text)) throw Error("cannot write " + eval_out);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
  return cli::kOk;
}
