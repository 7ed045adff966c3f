#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "nlpscm/cli.hpp"
#include "nlpscm/dataset.hpp"

using namespace nlpscm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("nlpscm_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

cli::ExperimentConfig small(const std::string& profile, int edge_budget) {
  auto c = cli::profile(profile);
  c.batch_sizes = {200, 200};
  c.run.edge_budget = edge_budget;
  c.seed = 3;
  c.run.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("config keys are validated") {
  CHECK_THROWS_AS(cli::parse_config(json{{"bogus", 1}}), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"fci", {{"alpah", 0.1}}}}), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"profile", "nope"}}), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"fixture", "nope"}}), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"schema_version", 99}}), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"budgets", {{"edge", -1}}}}), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"expert", {{"noise", 1.5}}}}), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"score", {{"w1", -0.1}}}}), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"seed", "three"}}), cli::UsageError);
}

TEST_CASE("profiles carry the experiment settings") {
  for (const auto& name : cli::profile_names()) CHECK_NOTHROW(cli::profile(name));
  const auto eq = cli::profile("earthquake");
  CHECK(eq.batch_sizes == std::vector<Eigen::Index>(6, 250));
  CHECK(eq.run.edge_budget == 50);
  const auto u2 = cli::profile("user2");
  CHECK(u2.run.fci.alpha == 0.3);
  CHECK(u2.run.weights.min_threshold == 5);
  const auto w = cli::profile("wine_synth");
  CHECK(w.priors.size() == 4);
  CHECK(w.priors[3].mean == 50.0);
  CHECK(w.priors[3].variance == 1.5);
}

TEST_CASE("config overrides apply on top of the profile") {
  const auto c = cli::parse_config(json{{"profile", "asia"},
                                        {"seed", 11},
                                        {"budgets", {{"edge", 7}}},
                                        {"expert", {{"noise", 0.25}}},
                                        {"score", {{"selection", "random"}, {"fixed_threshold", 15}}}},
                                   "/base");
  CHECK(c.fixture == "asia");
  CHECK(c.seed == 11);
  CHECK(c.run.seed == 11);
  CHECK(c.run.edge_budget == 7);
  CHECK(c.run.expert.noise == 0.25);
  CHECK(c.run.selection == Selection::Random);
  CHECK(c.run.fixed_threshold == 15.0);
  CHECK(c.output == "/base/out");
  // The round trip through to_json is a fixed point.
  const auto j = json::parse(cli::to_json(c).dump());
  CHECK(cli::to_json(cli::parse_config(j)).dump() == cli::to_json(c).dump());
}

TEST_CASE("simulate writes deterministic files") {
  TempDir a, b;
  auto cfg = cli::profile("earthquake");
  cfg.seed = 4;
  cli::cmd_simulate(cfg, a.path);
  cli::cmd_simulate(cfg, b.path);
  for (int i = 1; i <= 6; ++i) {
    const auto name = "batch_0" + std::to_string(i) + ".csv";
    REQUIRE(fs::exists(a.path / name));
    CHECK(slurp(a.path / name) == slurp(b.path / name));
    const auto d = read_csv_file((a.path / name).string());
    CHECK(d.rows() == 250);
    CHECK(d.cols() == 5);
  }
  const auto m = json::parse(slurp(a.path / "manifest.json"));
  CHECK(m["seed"] == 4);
  CHECK(m["batches"].size() == 6);
  CHECK(fs::exists(a.path / "truth.json"));

  auto bad = cfg;
  bad.batch_sizes.clear();
  CHECK_THROWS_AS(cli::cmd_simulate(bad, a.path / "x"), cli::UsageError);
  CHECK_THROWS_AS(cli::parse_config(json{{"profile", "earthquake"}, {"batch_sizes", {250, 0}}}), cli::UsageError);
  bad = cfg;
  bad.bias = SelectionBias{"NotAColumn", 0.5, 0.9, 0.1};
  CHECK_THROWS(cli::cmd_simulate(bad, a.path / "y"));
}

TEST_CASE("discover is deterministic and writes its outputs") {
  TempDir a, b;
  const auto cfg = small("earthquake", 6);
  cli::cmd_discover(cfg, std::nullopt, a.path);
  cli::cmd_discover(cfg, std::nullopt, b.path);
  CHECK(slurp(a.path / "report.json") == slurp(b.path / "report.json"));
  CHECK(fs::exists(a.path / "pags" / "batch_02.pag"));
  const auto csv = slurp(a.path / "metrics.csv");
  CHECK(csv.rfind("batch,mod_shd,sid_lo,sid_hi,precision,recall,f1,mean_entropy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const auto r = json::parse(slurp(a.path / "report.json"));
  CHECK(r["schema_version"] == kReportSchemaVersion);
  CHECK(r["method"] == "nlpscm");
}

TEST_CASE("zero budget matches the vanilla baseline") {
  const auto cfg = small("asia", 0);
  const auto learner = cli::discover(cfg, std::nullopt, 5);
  const auto vanilla = cli::discover(cfg, FciVariant::Vanilla, 5);
  REQUIRE(learner.pags.size() == vanilla.pags.size());
  for (std::size_t i = 0; i < learner.pags.size(); ++i) CHECK(learner.pags[i] == vanilla.pags[i]);
}

TEST_CASE("several seeds fan out into separate directories") {
  TempDir a;
  auto cfg = small("earthquake", 3);
  cfg.seeds = 3;
  cli::cmd_discover(cfg, FciVariant::Iterative, a.path);
  for (int s = 3; s < 6; ++s) CHECK(fs::exists(a.path / ("seed_" + std::to_string(s)) / "report.json"));
  const auto summary = slurp(a.path / "summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 4);
  // A single-seed run writes the same report as its fan-out twin.
  TempDir b;
  auto one = cfg;
  one.seeds = 1;
  one.seed = 4;
  cli::cmd_discover(one, FciVariant::Iterative, b.path);
  CHECK(slurp(b.path / "report.json") == slurp(a.path / "seed_4" / "report.json"));
}

TEST_CASE("estimate writes one trace per prior") {
  TempDir a;
  auto cfg = cli::profile("wine_synth");
  cfg.batch_sizes = {300, 300};
  cfg.em.max_e_steps = 3;
  cfg.em.max_m_steps = 5;
  cli::cmd_estimate(cfg, a.path);
  for (int k = 1; k <= 4; ++k) {
    CHECK(fs::exists(a.path / ("params_prior_" + std::to_string(k) + ".json")));
    const auto csv = slurp(a.path / ("error_prior_" + std::to_string(k) + ".csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  }
}

TEST_CASE("estimate without a latent is one OLS pass") {
  TempDir a;
  auto cfg = cli::profile("user1");
  cfg.batch_sizes = {50000};
  cli::cmd_estimate(cfg, a.path);
  const auto j = json::parse(slurp(a.path / "params_prior_1.json"));
  CHECK(j["batches"].size() == 1);
  CHECK(j["batches"][0]["l2_error"].get<double>() < 0.05);
}

TEST_CASE("evaluate reads files") {
  TempDir a;
  const auto truth = testing::make_dag({"A", "B"}, {{"A", "B"}});
  {
    std::ofstream(a.path / "truth.json") << dag_to_json(truth).dump();
    std::ofstream(a.path / "bi.pag") << "nodes A B\nA <> B\n";
    std::ofstream(a.path / "circ.pag") << "nodes A B\nA o> B\n";
    std::ofstream(a.path / "same.pag") << serialize_pag(truth.to_pag());
    std::ofstream(a.path / "other.pag") << "nodes A C\n";
  }
  const auto t = (a.path / "truth.json").string();
  CHECK(cli::cmd_evaluate((a.path / "bi.pag").string(), t).mod_shd == 1.0);
  CHECK(cli::cmd_evaluate((a.path / "circ.pag").string(), t).mod_shd == 0.5);
  const auto same = cli::cmd_evaluate((a.path / "same.pag").string(), t);
  CHECK(same.mod_shd == 0.0);
  CHECK(same.f1 == 1.0);
  REQUIRE(same.sid);
  CHECK(same.sid->upper == 0);

  try {
    cli::cmd_evaluate((a.path / "missing.pag").string(), t);
    FAIL("expected a usage error");
  } catch (const std::exception& e) {
    CHECK(cli::exit_code_for(e) == cli::kUsage);
  }
  try {
    cli::cmd_evaluate((a.path / "other.pag").string(), t);
    FAIL("expected a metric error");
  } catch (const std::exception& e) {
    CHECK(cli::exit_code_for(e) == cli::kRuntime);
  }
}

TEST_CASE("exit codes") {
  CHECK(cli::exit_code_for(cli::UsageError("x")) == cli::kUsage);
  CHECK(cli::exit_code_for(ExpertError(ExpertError::Kind::Authentication, "x")) == cli::kExternal);
  CHECK(cli::exit_code_for(InvalidArgument("x")) == cli::kRuntime);
  CHECK(cli::exit_code_for(std::runtime_error("x")) == cli::kRuntime);
}

TEST_CASE("http backend without a key is an external failure") {
  auto cfg = small("earthquake", 1);
  cfg.run.expert.backend = ExpertConfig::Backend::Http;
  const char* saved[2] = {std::getenv("NLPSCM_API_KEY"), std::getenv("OPENAI_API_KEY")};
  const std::string keep[2] = {saved[0] ? saved[0] : "", saved[1] ? saved[1] : ""};
  ::unsetenv("NLPSCM_API_KEY");
  ::unsetenv("OPENAI_API_KEY");
  try {
    cli::discover(cfg, std::nullopt, 1);
    FAIL("expected an expert error");
  } catch (const std::exception& e) {
    CHECK(cli::exit_code_for(e) == cli::kExternal);
  }
  if (saved[0]) ::setenv("NLPSCM_API_KEY", keep[0].c_str(), 1);
  if (saved[1]) ::setenv("OPENAI_API_KEY", keep[1].c_str(), 1);
}

TEST_CASE("seed derivation separates streams") {
  CHECK(cli::derive_seed(1, 1) != cli::derive_seed(1, 2));
  CHECK(cli::derive_seed(1, 1) != cli::derive_seed(2, 1));
  CHECK(cli::derive_seed(7, 3) == cli::derive_seed(7, 3));
}

TEST_CASE("probe scores pairwise answers as a graph") {
  const auto truth = fixture("earthquake").dag;
  SimulatedExpert exact(truth, {}, 1);
  const auto r = cli::probe_round(exact, truth);
  CHECK(r.shd == 0);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.claimed == 4);

  // An expert that claims a forward edge for every pair: 4 true edges among 10 pairs.
  struct Eager : Expert {
    ExpertAnswer query_edge(const std::string&, const std::string&, const std::string&) override {
      return {EdgeCategory::Directed, std::nullopt};
    }
    ConfounderAnswer query_confounder(const std::string&, const std::string&) override { return {}; }
    GaussianPrior query_prior(const std::string&, const std::vector<std::string>&) override { return {}; }
    std::map<std::string, double> query_correlation(const std::string&, const std::vector<std::string>&) override {
      return {};
    }
  } eager;
  const auto e = cli::probe_round(eager, truth);
  int forward = 0;
  for (const auto& edge : truth.edges()) forward += edge.from < edge.to;
  CHECK(e.claimed == 10);
  CHECK(e.precision == doctest::Approx(forward / 10.0));
  CHECK(e.recall == doctest::Approx(forward / 4.0));
  CHECK(e.shd == 10 - forward);

  TempDir a;
  auto cfg = cli::profile("asia");
  cfg.run.expert.noise = 0.5;
  const auto j = cli::cmd_probe(cfg, 3, a.path);
  CHECK(j["rounds"].size() == 3);
  CHECK(fs::exists(a.path / "probe.json"));
  CHECK_THROWS_AS(cli::cmd_probe(cfg, 0, a.path), cli::UsageError);
}
