#include "nlpscm/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "nlpscm/ci_test.hpp"
#include "nlpscm/error.hpp"

namespace nlpscm {

double pair_threshold(const EdgeHistogram& hist, PairKey pair, const RunConfig& cfg) {
  if (cfg.fixed_threshold) return *cfg.fixed_threshold;
  return hist.effective_threshold(pair, cfg.weights);
}

double pair_score(const EdgeHistogram& hist, PairKey pair, const RunConfig& cfg) {
  const auto te = hist.pair_total(pair);
  if (te == 0) return std::numeric_limits<double>::infinity();
  const auto bins = hist.bins(pair);
  const double top = static_cast<double>(*std::max_element(bins.begin(), bins.end()));
  const double td = pair_threshold(hist, pair, cfg) - top;
  return selection_score(hist.entropy(pair), td, static_cast<double>(hist.total()), static_cast<double>(te),
                         cfg.weights);
}

namespace {

std::vector<PairKey> all_pairs(std::size_t d) {
  std::vector<PairKey> out;
  for (int a = 0; a < static_cast<int>(d); ++a) {
    for (int b = a + 1; b < static_cast<int>(d); ++b) out.push_back({a, b});
  }
  return out;
}

}  // namespace

BatchOutcome run_batch(LearnerState state, const BatchDataset& data, const RunConfig& cfg, Expert& expert) {
  if (state.variables.empty()) state.variables = data.names();
  if (data.names() != state.variables) throw InvalidArgument("batch variables do not match the run's variables");
  if (cfg.edge_budget < 0 || cfg.confounder_budget < 0) throw InvalidArgument("budgets must be nonnegative");
  cfg.weights.validate();
  const auto& names = state.variables;
  const int batch = state.batch + 1;

  BatchOutcome out;
  out.trace.batch = batch;
  if (data.empty()) {
    out.discovered = state.discovered.value_or(Pag(names));
  } else {
    out.discovered = fci(*make_data_test(data, cfg.fci.alpha), state.background, cfg.fci);
  }
  state.discovered = out.discovered;

  std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(batch)};
  std::mt19937_64 rng(seq);
  const auto pairs = all_pairs(names.size());
  for (int q = 0; q < cfg.edge_budget; ++q) {
    std::vector<PairKey> arms;
    for (const auto& p : pairs) {
      if (!state.background.contains(p.lo, p.hi)) arms.push_back(p);
    }
    if (arms.empty()) break;
    PairKey chosen = arms.front();
    double best = -std::numeric_limits<double>::infinity();
    if (cfg.selection == Selection::Random) {
      chosen = arms[std::uniform_int_distribution<std::size_t>(0, arms.size() - 1)(rng)];
      best = pair_score(state.edges, chosen, cfg);
    } else {
      for (const auto& p : arms) {
        const double s = pair_score(state.edges, p, cfg);
        if (s > best) {
          best = s;
          chosen = p;
        }
      }
    }

    EdgeQuery record{names[static_cast<std::size_t>(chosen.lo)], names[static_cast<std::size_t>(chosen.hi)], best,
                     std::nullopt, std::nullopt, {}};
    try {
      const auto answer = expert.query_edge(record.a, record.b, describe_background(state.background, names));
      record.answer = answer.category;
    } catch (const ExpertError& e) {
      if (e.kind() == ExpertError::Kind::Authentication) throw;
      record.error = e.what();
    }
    if (record.answer) {
      state.edges.update(chosen.lo, chosen.hi, *record.answer);
      for (const auto& p : pairs) {
        if (state.background.contains(p.lo, p.hi) || state.edges.pair_total(p) == 0) continue;
        if (const auto cat = promote(state.edges.bins(p), pair_threshold(state.edges, p, cfg))) {
          state.background.add(p.lo, p.hi, *cat, batch);
          record.promotions.push_back(
              {names[static_cast<std::size_t>(p.lo)], names[static_cast<std::size_t>(p.hi)], *cat});
        }
      }
    }
    out.trace.edge_queries.push_back(std::move(record));
  }

  std::vector<PairKey> confounded;
  for (const auto& [pair, fact] : state.background.facts()) {
    if (fact.category == EdgeCategory::Bidirected) confounded.push_back(pair);
  }
  if (!confounded.empty()) {
    for (int q = 0; q < cfg.confounder_budget; ++q) {
      const auto pair = confounded[static_cast<std::size_t>(q) % confounded.size()];
      ConfounderQuery record{names[static_cast<std::size_t>(pair.lo)], names[static_cast<std::size_t>(pair.hi)],
                             std::nullopt, std::nullopt};
      try {
        const auto answer = expert.query_confounder(record.a, record.b);
        record.name = answer.name;
        if (answer.name) state.latents.update(pair, *answer.name);
      } catch (const ExpertError& e) {
        if (e.kind() == ExpertError::Kind::Authentication) throw;
        record.error = e.what();
      }
      out.trace.confounder_queries.push_back(std::move(record));
    }
  }

  out.refined = out.discovered;
  for (const auto& [pair, fact] : state.background.facts()) out.refined.set_category(pair.lo, pair.hi, fact.category);
  state.batch = batch;
  out.state = std::move(state);
  return out;
}

SequenceReport run_sequence(const std::vector<BatchDataset>& batches, const RunConfig& cfg, Expert& expert,
                            const std::optional<Dag>& truth) {
  if (batches.empty()) throw InvalidArgument("a run needs at least one batch");
  SequenceReport report;
  LearnerState state;
  for (const auto& data : batches) {
    if (data.empty()) {
      report.warnings.push_back("batch " + std::to_string(state.batch + 1) +
                                " is empty; the previous FCI graph is carried forward");
    }
    auto step = run_batch(std::move(state), data, cfg, expert);
    state = std::move(step.state);
    BatchReport br;
    br.batch = state.batch;
    if (state.edges.total() > 0) br.mean_entropy = mean_entropy(state.edges);
    if (truth) br.metrics = evaluate(step.refined, *truth, br.mean_entropy);
    if (br.metrics && br.metrics->sid_error) {
      report.warnings.push_back("batch " + std::to_string(br.batch) + ": SID unavailable: " + *br.metrics->sid_error);
    }
    br.discovered = std::move(step.discovered);
    br.refined = std::move(step.refined);
    br.trace = std::move(step.trace);
    br.background = state.background;
    br.edges = state.edges;
    br.latents = state.latents;
    report.batches.push_back(std::move(br));
  }
  report.variables = state.variables;
  report.final_state = std::move(state);
  for (const auto& w : expert.warnings()) report.warnings.push_back(w);
  return report;
}

nlohmann::ordered_json to_json(const BatchTrace& trace) {
  nlohmann::ordered_json j;
  j["batch"] = trace.batch;
  auto edges = nlohmann::ordered_json::array();
  for (const auto& q : trace.edge_queries) {
    nlohmann::ordered_json e;
    e["a"] = q.a;
    e["b"] = q.b;
    if (std::isinf(q.score)) {
      e["score"] = "inf";
    } else {
      e["score"] = q.score;
    }
    e["answer"] = q.answer ? nlohmann::ordered_json(std::string(to_string(*q.answer))) : nlohmann::ordered_json(nullptr);
    if (q.error) e["error"] = *q.error;
    auto promos = nlohmann::ordered_json::array();
    for (const auto& p : q.promotions) promos.push_back({{"a", p.a}, {"b", p.b}, {"category", to_string(p.category)}});
    e["promotions"] = std::move(promos);
    edges.push_back(std::move(e));
  }
  j["edge_queries"] = std::move(edges);
  auto conf = nlohmann::ordered_json::array();
  for (const auto& q : trace.confounder_queries) {
    nlohmann::ordered_json c;
    c["a"] = q.a;
    c["b"] = q.b;
    c["name"] = q.name ? nlohmann::ordered_json(*q.name) : nlohmann::ordered_json(nullptr);
    if (q.error) c["error"] = *q.error;
    conf.push_back(std::move(c));
  }
  j["confounder_queries"] = std::move(conf);
  return j;
}

nlohmann::ordered_json to_json(const BackgroundKnowledge& background, const std::vector<std::string>& names) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& [pair, fact] : background.facts()) {
    arr.push_back({{"a", names[static_cast<std::size_t>(pair.lo)]},
                   {"b", names[static_cast<std::size_t>(pair.hi)]},
                   {"category", to_string(fact.category)},
                   {"batch", fact.batch}});
  }
  return arr;
}

nlohmann::ordered_json to_json(const SequenceReport& report) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["variables"] = report.variables;
  auto batches = nlohmann::ordered_json::array();
  for (const auto& b : report.batches) {
    nlohmann::ordered_json e;
    e["batch"] = b.batch;
    e["fci_pag"] = serialize_pag(b.discovered);
    e["pag"] = serialize_pag(b.refined);
    e["metrics"] = b.metrics ? to_json(*b.metrics) : nlohmann::ordered_json(nullptr);
    e["mean_entropy"] = b.mean_entropy ? nlohmann::ordered_json(*b.mean_entropy) : nlohmann::ordered_json(nullptr);
    e["edge_queries_used"] = b.trace.edge_queries.size();
    e["confounder_queries_used"] = b.trace.confounder_queries.size();
    e["background"] = to_json(b.background, report.variables);
    e["edge_histogram"] = to_json(b.edges, report.variables);
    e["latent_histogram"] = to_json(b.latents, report.variables);
    e["trace"] = to_json(b.trace);
    batches.push_back(std::move(e));
  }
  j["batches"] = std::move(batches);
  j["warnings"] = report.warnings;
  return j;
}

}  // namespace nlpscm
