#include "doctest.h"
#include "helpers.hpp"
#include "nlpscm/error.hpp"
#include "nlpscm/learner.hpp"
#include "nlpscm/sem.hpp"

using namespace nlpscm;

namespace {

/// Fails every query with the given kind; counts calls.
struct FailingExpert : Expert {
  explicit FailingExpert(ExpertError::Kind k) : kind(k) {}
  ExpertAnswer query_edge(const std::string&, const std::string&, const std::string&) override {
    ++calls;
    throw ExpertError(kind, "scripted failure");
  }
  ConfounderAnswer query_confounder(const std::string&, const std::string&) override {
    ++calls;
    throw ExpertError(kind, "scripted failure");
  }
  GaussianPrior query_prior(const std::string&, const std::vector<std::string>&) override { return {}; }
  std::map<std::string, double> query_correlation(const std::string&, const std::vector<std::string>&) override {
    return {};
  }
  ExpertError::Kind kind;
  int calls = 0;
};

RunConfig base_config(int edge_budget) {
  RunConfig cfg;
  cfg.edge_budget = edge_budget;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("zero budget leaves the state alone") {
  const auto spec = fixture("earthquake");
  const auto data = simulate(spec, 1000, 1);
  SimulatedExpert expert(spec.dag, {}, 1);
  const auto out = run_batch({}, data, base_config(0), expert);
  CHECK(out.refined == out.discovered);
  CHECK(out.state.batch == 1);
  CHECK(out.state.edges.total() == 0);
  CHECK(out.state.background.size() == 0);
  CHECK(out.trace.edge_queries.empty());
}

TEST_CASE("noiseless expert with enough budget recovers the earthquake graph") {
  const auto spec = fixture("earthquake");
  const auto data = simulate(spec, 1000, 2);
  SimulatedExpert expert(spec.dag, {}, 2);
  const auto out = run_batch({}, data, base_config(100), expert);
  CHECK(out.state.background.size() == 10);
  CHECK(mod_shd(out.refined, spec.dag) == 0.0);
  // Every pair was queried once before any pair was queried twice.
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& q = out.trace.edge_queries[i];
    CHECK(std::isinf(q.score));
    seen.insert({q.a, q.b});
  }
  CHECK(seen.size() == 10);
}

TEST_CASE("budget accounting and background override") {
  const auto spec = fixture("asia");
  const auto batches = split_batches(simulate(spec, 1500, 3), {500, 500, 500}, std::nullopt, 3);
  ExpertConfig ecfg;
  ecfg.noise = 0.3;
  SimulatedExpert expert(spec.dag, ecfg, 3);
  auto cfg = base_config(20);
  cfg.confounder_budget = 4;
  LearnerState state;
  for (const auto& b : batches) {
    const auto prev = state;
    auto out = run_batch(state, b, cfg, expert);
    CHECK(out.trace.edge_queries.size() <= 20u);
    CHECK(out.trace.confounder_queries.size() <= 4u);
    std::int64_t answered = 0;
    for (const auto& q : out.trace.edge_queries) answered += q.answer.has_value();
    CHECK(out.state.edges.total() - prev.edges.total() == answered);
    for (const auto& [pair, fact] : prev.background.facts()) {
      REQUIRE(out.state.background.contains(pair.lo, pair.hi));
      CHECK(out.state.background.facts().at(pair).category == fact.category);
    }
    for (const auto& [pair, bins] : prev.edges.pairs()) {
      const auto now = out.state.edges.bins(pair);
      for (std::size_t c = 0; c < bins.size(); ++c) CHECK(now[c] >= bins[c]);
    }
    for (const auto& [pair, fact] : out.state.background.facts()) {
      CHECK(out.refined.category(pair.lo, pair.hi) == fact.category);
    }
    state = out.state;
  }
}

TEST_CASE("runs are reproducible") {
  const auto spec = fixture("asia");
  const auto batches = split_batches(simulate(spec, 1000, 4), {500, 500}, std::nullopt, 4);
  ExpertConfig ecfg;
  ecfg.noise = 0.2;
  auto cfg = base_config(15);
  for (auto sel : {Selection::Score, Selection::Random}) {
    cfg.selection = sel;
    SimulatedExpert e1(spec.dag, ecfg, 9), e2(spec.dag, ecfg, 9);
    const auto r1 = run_sequence(batches, cfg, e1, spec.dag);
    const auto r2 = run_sequence(batches, cfg, e2, spec.dag);
    CHECK(to_json(r1).dump() == to_json(r2).dump());
    CHECK(r1.final_state == r2.final_state);
  }
}

TEST_CASE("single-batch sequence equals run_batch") {
  const auto spec = fixture("earthquake");
  const auto data = simulate(spec, 800, 6);
  ExpertConfig ecfg;
  ecfg.noise = 0.2;
  SimulatedExpert e1(spec.dag, ecfg, 1), e2(spec.dag, ecfg, 1);
  const auto cfg = base_config(12);
  const auto seq = run_sequence({data}, cfg, e1);
  const auto one = run_batch({}, data, cfg, e2);
  CHECK(seq.batches.size() == 1);
  CHECK(seq.batches[0].refined == one.refined);
  CHECK(seq.final_state == one.state);
}

TEST_CASE("a promoted bidirected pair triggers confounder queries") {
  const auto spec = fixture("wine_synth");
  const auto batches = split_batches(simulate(spec, 957, 7), {319, 319, 319}, std::nullopt, 7);
  ExpertConfig ecfg;
  ecfg.noise = 0.1;
  SimulatedExpert expert(spec.dag, ecfg, 7);
  auto cfg = base_config(50);
  cfg.confounder_budget = 10;
  const auto report = run_sequence(batches, cfg, expert, spec.dag);
  std::size_t asked = 0;
  for (const auto& b : report.batches) asked += b.trace.confounder_queries.size();
  CHECK(asked >= 1);
  const auto& st = report.final_state;
  const auto pair = PairKey::of(st.variables.size() ? static_cast<int>(std::find(st.variables.begin(), st.variables.end(), "density") - st.variables.begin()) : 0,
                                static_cast<int>(std::find(st.variables.begin(), st.variables.end(), "quality") - st.variables.begin()));
  REQUIRE(st.background.category(pair.lo, pair.hi) == EdgeCategory::Bidirected);
  CHECK(st.latents.modal(pair) == "alcohol_content");
}

TEST_CASE("expert failures consume budget") {
  const auto spec = fixture("earthquake");
  const auto data = simulate(spec, 500, 8);
  FailingExpert expert(ExpertError::Kind::Timeout);
  const auto out = run_batch({}, data, base_config(7), expert);
  CHECK(expert.calls == 7);
  CHECK(out.trace.edge_queries.size() == 7);
  for (const auto& q : out.trace.edge_queries) {
    CHECK_FALSE(q.answer);
    CHECK(q.error);
  }
  CHECK(out.state.edges.total() == 0);
  CHECK(out.refined == out.discovered);
}

TEST_CASE("authentication failures abort the run") {
  const auto spec = fixture("earthquake");
  FailingExpert expert(ExpertError::Kind::Authentication);
  CHECK_THROWS_AS(run_batch({}, simulate(spec, 500, 8), base_config(3), expert), ExpertError);
  CHECK(expert.calls == 1);
}

TEST_CASE("empty batch carries the previous FCI graph forward") {
  const auto spec = fixture("earthquake");
  const auto full = simulate(spec, 800, 10);
  const BatchDataset empty(Eigen::MatrixXd(0, 5), full.names());
  SimulatedExpert expert(spec.dag, {}, 1);
  const auto report = run_sequence({full, empty}, base_config(0), expert);
  REQUIRE(report.batches.size() == 2);
  CHECK(report.batches[1].discovered == report.batches[0].discovered);
  CHECK(report.warnings.size() == 1);
}

TEST_CASE("input checks") {
  const auto spec = fixture("earthquake");
  const auto data = simulate(spec, 200, 1);
  SimulatedExpert expert(spec.dag, {}, 1);
  auto cfg = base_config(-1);
  CHECK_THROWS_AS(run_batch({}, data, cfg, expert), InvalidArgument);
  LearnerState other;
  other.variables = {"x", "y"};
  CHECK_THROWS_AS(run_batch(other, data, base_config(1), expert), InvalidArgument);
  CHECK_THROWS_AS(run_sequence({}, base_config(1), expert), InvalidArgument);
}

TEST_CASE("report json layout") {
  const auto spec = fixture("earthquake");
  SimulatedExpert expert(spec.dag, {}, 1);
  const auto r = run_sequence({simulate(spec, 300, 2)}, base_config(3), expert, spec.dag);
  const auto j = to_json(r);
  CHECK(j["schema_version"] == kReportSchemaVersion);
  CHECK(j["batches"][0]["edge_queries_used"] == 3);
  CHECK(j["batches"][0]["trace"]["edge_queries"][0]["score"] == "inf");
  CHECK(j["batches"][0].contains("fci_pag"));
  CHECK(j["batches"][0]["metrics"].contains("mod_shd"));
}
