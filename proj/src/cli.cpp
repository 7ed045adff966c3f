#include "nlpscm/cli.hpp"

#include <fstream>
#include <future>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "nlpscm/dataset.hpp"

namespace nlpscm::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kUsage;
  if (dynamic_cast<const ExpertError*>(&e)) return kExternal;
  return kRuntime;
}

// ---------------------------------------------------------------- profiles

std::vector<std::string> profile_names() { return {"earthquake", "asia", "user1", "user2", "wine_synth"}; }

ExperimentConfig profile(const std::string& name) {
  ExperimentConfig c;
  c.profile = name;
  c.fixture = name;
  if (name == "earthquake" || name == "asia") {
    c.batch_sizes.assign(6, 250);
    c.run.edge_budget = name == "earthquake" ? 50 : 20;
  } else if (name == "user1") {
    c.batch_sizes = {3000, 1000, 2000, 4000, 3000, 2000, 5000};
    c.run.edge_budget = 70;
  } else if (name == "user2") {
    c.batch_sizes = {2000, 1000, 2000, 1000, 1000, 3000, 1000};
    c.run.edge_budget = 20;
    c.run.weights.w1 = 0.3;
    c.run.weights.w2 = 0.4;
    c.run.weights.w3 = 0.3;
    c.run.weights.alpha = 0.5;
    c.run.weights.min_threshold = 5;
    c.run.fci.alpha = 0.3;
  } else if (name == "wine_synth") {
    c.batch_sizes = {319, 319, 319, 319, 323};
    c.run.edge_budget = 50;
    c.run.confounder_budget = 10;
    c.priors = {{11.0, 1.0}, {12.5, 2.5}, {0.0, 1.0}, {50.0, 1.5}};
    c.rho = {{"density", -0.50}, {"quality", 0.48}};
    c.run.expert.correlations = c.rho;
  } else {
    throw UsageError("unknown profile: " + name);
  }
  return c;
}

// ---------------------------------------------------------------- config parsing

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw UsageError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw UsageError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void read_optional(const json& obj, const char* key, std::optional<T>& out, const std::string& where) {
  if (!obj.contains(key)) return;
  if (obj.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read(obj, key, v, where);
  out = v;
}

GaussianPrior read_prior(const json& j, const std::string& where) {
  check_keys(j, {"mean", "variance"}, where);
  GaussianPrior p;
  read(j, "mean", p.mean, where);
  read(j, "variance", p.variance, where);
  if (!(p.variance > 0)) throw UsageError(where + ".variance must be positive");
  return p;
}

std::string resolve(const std::string& path, const fs::path& base) {
  if (path.empty() || base.empty() || fs::path(path).is_absolute()) return path;
  return (base / path).lexically_normal().string();
}

void parse_expert(const json& j, ExpertConfig& e) {
  const std::string w = "expert";
  check_keys(j, {"backend", "noise", "endpoint", "model", "temperature", "template_dir", "timeout_seconds", "retries",
                 "experiment_name", "descriptions", "distractors", "prior", "correlations"},
             w);
  if (j.contains("backend")) {
    std::string b;
    read(j, "backend", b, w);
    if (b == "simulated") {
      e.backend = ExpertConfig::Backend::Simulated;
    } else if (b == "http") {
      e.backend = ExpertConfig::Backend::Http;
    } else {
      throw UsageError("expert.backend must be 'simulated' or 'http'");
    }
  }
  read(j, "noise", e.noise, w);
  if (e.noise < 0 || e.noise > 1) throw UsageError("expert.noise must lie in [0, 1]");
  read(j, "endpoint", e.endpoint, w);
  read(j, "model", e.model, w);
  read(j, "temperature", e.temperature, w);
  read_optional(j, "template_dir", e.template_dir, w);
  read(j, "timeout_seconds", e.timeout_seconds, w);
  read(j, "retries", e.retries, w);
  if (e.retries < 0) throw UsageError("expert.retries must be nonnegative");
  read(j, "experiment_name", e.experiment_name, w);
  read(j, "descriptions", e.descriptions, w);
  read(j, "distractors", e.distractors, w);
  if (j.contains("prior")) {
    if (j["prior"].is_null()) {
      e.prior.reset();
    } else {
      e.prior = read_prior(j["prior"], "expert.prior");
    }
  }
  read(j, "correlations", e.correlations, w);
}

ordered_json prior_json(const GaussianPrior& p) { return {{"mean", p.mean}, {"variance", p.variance}}; }

}  // namespace

ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
  const std::string w = "config";
  check_keys(j, {"schema_version", "profile", "fixture", "truth", "data", "batch_sizes", "bias", "seed", "seeds",
                 "output", "expert", "budgets", "score", "fci", "em", "estimate"},
             w);
  if (j.contains("schema_version")) {
    int v = 0;
    read(j, "schema_version", v, w);
    if (v != kReportSchemaVersion) throw UsageError("unsupported config schema_version " + std::to_string(v));
  }
  ExperimentConfig c;
  if (j.contains("profile")) {
    std::string name;
    read(j, "profile", name, w);
    c = profile(name);
  }
  read(j, "fixture", c.fixture, w);
  if (!c.fixture.empty()) {
    const auto names = fixture_names();
    if (std::find(names.begin(), names.end(), c.fixture) == names.end()) {
      throw UsageError("unknown fixture: " + c.fixture);
    }
  }
  read(j, "truth", c.truth_file, w);
  c.truth_file = resolve(c.truth_file, base_dir);
  read(j, "data", c.batch_files, w);
  for (auto& f : c.batch_files) f = resolve(f, base_dir);
  read(j, "batch_sizes", c.batch_sizes, w);
  for (auto s : c.batch_sizes) {
    if (s < 1) throw UsageError("batch sizes must be positive");
  }
  if (j.contains("bias")) {
    if (j["bias"].is_null()) {
      c.bias.reset();
    } else {
      check_keys(j["bias"], {"variable", "quantile", "p_in", "p_out"}, "bias");
      SelectionBias b;
      read(j["bias"], "variable", b.variable, "bias");
      read(j["bias"], "quantile", b.quantile, "bias");
      read(j["bias"], "p_in", b.p_in, "bias");
      read(j["bias"], "p_out", b.p_out, "bias");
      if (b.variable.empty()) throw UsageError("bias.variable is required");
      c.bias = b;
    }
  }
  read(j, "seed", c.seed, w);
  c.run.seed = c.seed;
  read(j, "seeds", c.seeds, w);
  if (c.seeds < 1) throw UsageError("seeds must be at least 1");
  read(j, "output", c.output, w);
  c.output = resolve(c.output, base_dir);

  if (j.contains("expert")) parse_expert(j["expert"], c.run.expert);
  if (c.run.expert.template_dir) c.run.expert.template_dir = resolve(*c.run.expert.template_dir, base_dir);

  if (j.contains("budgets")) {
    const auto& b = j["budgets"];
    check_keys(b, {"edge", "confounder"}, "budgets");
    read(b, "edge", c.run.edge_budget, "budgets");
    read(b, "confounder", c.run.confounder_budget, "budgets");
    if (c.run.edge_budget < 0 || c.run.confounder_budget < 0) throw UsageError("budgets must be nonnegative");
  }
  if (j.contains("score")) {
    const auto& s = j["score"];
    check_keys(s, {"w1", "w2", "w3", "alpha", "min_threshold", "fixed_threshold", "selection"}, "score");
    read(s, "w1", c.run.weights.w1, "score");
    read(s, "w2", c.run.weights.w2, "score");
    read(s, "w3", c.run.weights.w3, "score");
    read(s, "alpha", c.run.weights.alpha, "score");
    read(s, "min_threshold", c.run.weights.min_threshold, "score");
    read_optional(s, "fixed_threshold", c.run.fixed_threshold, "score");
    if (s.contains("selection")) {
      std::string sel;
      read(s, "selection", sel, "score");
      if (sel == "score") {
        c.run.selection = Selection::Score;
      } else if (sel == "random") {
        c.run.selection = Selection::Random;
      } else {
        throw UsageError("score.selection must be 'score' or 'random'");
      }
    }
    try {
      c.run.weights.validate();
    } catch (const InvalidArgument& e) {
      throw UsageError(std::string("score: ") + e.what());
    }
  }
  if (j.contains("fci")) {
    const auto& f = j["fci"];
    check_keys(f, {"alpha", "max_depth", "possible_dsep", "extended_rules", "heuristics_h"}, "fci");
    read(f, "alpha", c.run.fci.alpha, "fci");
    if (!(c.run.fci.alpha > 0 && c.run.fci.alpha < 1)) throw UsageError("fci.alpha must lie in (0, 1)");
    read_optional(f, "max_depth", c.run.fci.max_depth, "fci");
    read_optional(f, "possible_dsep", c.run.fci.possible_dsep, "fci");
    read(f, "extended_rules", c.run.fci.extended_rules, "fci");
    read(f, "heuristics_h", c.heuristics_h, "fci");
    if (c.heuristics_h < 1) throw UsageError("fci.heuristics_h must be at least 1");
  }
  if (j.contains("em")) {
    const auto& e = j["em"];
    check_keys(e, {"eta", "max_e_steps", "max_m_steps", "lambda", "tolerance", "max_backtracks"}, "em");
    read(e, "eta", c.em.eta, "em");
    read(e, "max_e_steps", c.em.max_e_steps, "em");
    read(e, "max_m_steps", c.em.max_m_steps, "em");
    read(e, "lambda", c.em.lambda, "em");
    read(e, "tolerance", c.em.tolerance, "em");
    read(e, "max_backtracks", c.em.max_backtracks, "em");
    if (!(c.em.eta > 0)) throw UsageError("em.eta must be positive");
    if (c.em.lambda < 0) throw UsageError("em.lambda must be nonnegative");
  }
  if (j.contains("estimate")) {
    const auto& e = j["estimate"];
    check_keys(e, {"graph", "priors", "rho", "truth"}, "estimate");
    read(e, "graph", c.graph_file, "estimate");
    c.graph_file = resolve(c.graph_file, base_dir);
    if (e.contains("priors")) {
      if (!e["priors"].is_array()) throw UsageError("estimate.priors must be an array");
      c.priors.clear();
      for (const auto& p : e["priors"]) c.priors.push_back(read_prior(p, "estimate.priors[]"));
    }
    read(e, "rho", c.rho, "estimate");
    read(e, "truth", c.params_truth_file, "estimate");
    c.params_truth_file = resolve(c.params_truth_file, base_dir);
  }
  c.em.seed = c.seed;
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return parse_config(j, fs::path(path).parent_path());
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  if (!c.profile.empty()) j["profile"] = c.profile;
  if (!c.fixture.empty()) j["fixture"] = c.fixture;
  if (!c.truth_file.empty()) j["truth"] = c.truth_file;
  if (!c.batch_files.empty()) j["data"] = c.batch_files;
  j["batch_sizes"] = c.batch_sizes;
  if (c.bias) {
    j["bias"] = {{"variable", c.bias->variable}, {"quantile", c.bias->quantile}, {"p_in", c.bias->p_in},
                 {"p_out", c.bias->p_out}};
  } else {
    j["bias"] = nullptr;
  }
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  const auto& e = c.run.expert;
  ordered_json ex;
  ex["backend"] = e.backend == ExpertConfig::Backend::Http ? "http" : "simulated";
  ex["noise"] = e.noise;
  if (e.backend == ExpertConfig::Backend::Http) {
    ex["endpoint"] = e.endpoint;
    ex["model"] = e.model;
    ex["temperature"] = e.temperature;
    ex["retries"] = e.retries;
  }
  ex["prior"] = e.prior ? prior_json(*e.prior) : ordered_json(nullptr);
  ex["correlations"] = e.correlations;
  j["expert"] = std::move(ex);
  j["budgets"] = {{"edge", c.run.edge_budget}, {"confounder", c.run.confounder_budget}};
  const auto& w = c.run.weights;
  j["score"] = {{"w1", w.w1},
                {"w2", w.w2},
                {"w3", w.w3},
                {"alpha", w.alpha},
                {"min_threshold", w.min_threshold},
                {"fixed_threshold", c.run.fixed_threshold ? ordered_json(*c.run.fixed_threshold) : ordered_json(nullptr)},
                {"selection", c.run.selection == Selection::Random ? "random" : "score"}};
  j["fci"] = {{"alpha", c.run.fci.alpha},
              {"max_depth", c.run.fci.max_depth ? ordered_json(*c.run.fci.max_depth) : ordered_json(nullptr)},
              {"possible_dsep", c.run.fci.possible_dsep ? ordered_json(*c.run.fci.possible_dsep) : ordered_json(nullptr)},
              {"extended_rules", c.run.fci.extended_rules},
              {"heuristics_h", c.heuristics_h}};
  j["em"] = {{"eta", c.em.eta},           {"max_e_steps", c.em.max_e_steps}, {"max_m_steps", c.em.max_m_steps},
             {"lambda", c.em.lambda},     {"tolerance", c.em.tolerance},     {"max_backtracks", c.em.max_backtracks}};
  auto priors = ordered_json::array();
  for (const auto& p : c.priors) priors.push_back(prior_json(p));
  j["estimate"] = {{"priors", priors}, {"rho", c.rho}};
  return j;
}

// ---------------------------------------------------------------- inputs

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " is not configured");
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

json read_json_file(const std::string& path, const std::string& what) {
  require_file(path, what);
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(what + " " + path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
}

std::string batch_name(std::size_t i, const char* ext) {
  std::ostringstream s;
  s << "batch_" << std::setw(2) << std::setfill('0') << i + 1 << ext;
  return s.str();
}

// Kinds agreed across batch files: categorical only when every file reads it so.
std::vector<BatchDataset> unify_kinds(std::vector<BatchDataset> batches) {
  if (batches.size() < 2) return batches;
  std::vector<VariableKind> kinds = batches.front().kinds();
  for (const auto& b : batches) {
    if (b.names() != batches.front().names()) throw InvalidArgument("batch files have different columns");
    for (std::size_t c = 0; c < kinds.size(); ++c) {
      const auto& k = b.kinds()[c];
      if (!kinds[c].is_categorical() || !k.is_categorical()) {
        kinds[c] = VariableKind::continuous();
      } else {
        kinds[c].levels = std::max(kinds[c].levels, k.levels);
      }
    }
  }
  for (auto& b : batches) b = BatchDataset(b.data(), b.names(), kinds);
  return batches;
}

}  // namespace

std::vector<BatchDataset> load_batches(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.batch_files.empty()) {
    std::vector<BatchDataset> out;
    for (const auto& f : cfg.batch_files) {
      require_file(f, "batch file");
      out.push_back(read_csv_file(f));
    }
    return unify_kinds(std::move(out));
  }
  if (cfg.fixture.empty()) throw UsageError("config needs either data files or a fixture");
  if (cfg.batch_sizes.empty()) throw UsageError("config needs batch_sizes to simulate a fixture");
  const auto spec = fixture(cfg.fixture);
  const Eigen::Index total = std::accumulate(cfg.batch_sizes.begin(), cfg.batch_sizes.end(), Eigen::Index{0});
  const Eigen::Index pool = cfg.bias ? 4 * total : total;
  const auto data = simulate(spec, pool, derive_seed(seed, 1));
  return split_batches(data, cfg.batch_sizes, cfg.bias, derive_seed(seed, 2));
}

std::optional<Dag> load_truth(const ExperimentConfig& cfg) {
  if (!cfg.truth_file.empty()) return dag_from_json(read_json_file(cfg.truth_file, "truth file"));
  if (!cfg.fixture.empty()) return fixture(cfg.fixture).dag;
  return std::nullopt;
}

std::unique_ptr<Expert> make_expert(const ExperimentConfig& cfg, const std::vector<std::string>& variables,
                                    const std::optional<Dag>& truth, std::uint64_t seed) {
  const auto& e = cfg.run.expert;
  if (e.backend == ExpertConfig::Backend::Http) {
    const auto key = api_key_from_env();
    if (key.empty()) {
      throw ExpertError(ExpertError::Kind::Authentication, "no API key: set NLPSCM_API_KEY or OPENAI_API_KEY");
    }
    return std::make_unique<HttpExpert>(e, variables, make_http_transport(e.endpoint, key, e.timeout_seconds));
  }
  if (!truth) throw UsageError("the simulated expert needs a fixture or a truth file");
  return std::make_unique<SimulatedExpert>(*truth, e, derive_seed(seed, 3));
}

// ---------------------------------------------------------------- commands

std::string metrics_csv(const std::vector<std::optional<MetricReport>>& metrics) {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "batch,mod_shd,sid_lo,sid_hi,precision,recall,f1,mean_entropy\n";
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    s << i + 1;
    if (!metrics[i]) {
      s << ",,,,,,,\n";
      continue;
    }
    const auto& m = *metrics[i];
    s << ',' << m.mod_shd << ',';
    if (m.sid) s << m.sid->lower;
    s << ',';
    if (m.sid) s << m.sid->upper;
    s << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',';
    if (m.mean_entropy) s << *m.mean_entropy;
    s << '\n';
  }
  return s.str();
}

DiscoverRun discover(const ExperimentConfig& cfg, std::optional<FciVariant> variant, std::uint64_t seed) {
  const auto batches = load_batches(cfg, seed);
  const auto truth = load_truth(cfg);
  DiscoverRun run;
  run.seed = seed;
  ordered_json& r = run.report;
  r["schema_version"] = kReportSchemaVersion;
  r["command"] = "discover";
  r["method"] = variant ? std::string("fci_") + std::string(to_string(*variant)) : std::string("nlpscm");
  r["seed"] = seed;

  if (variant) {
    const auto vr = run_fci_variant(*variant, batches, cfg.run.fci, cfg.heuristics_h);
    r["variables"] = batches.front().names();
    auto arr = ordered_json::array();
    for (std::size_t i = 0; i < vr.pags.size(); ++i) {
      std::optional<MetricReport> m;
      if (truth) m = evaluate(vr.pags[i], *truth);
      arr.push_back({{"batch", i + 1},
                     {"pag", serialize_pag(vr.pags[i])},
                     {"metrics", m ? to_json(*m) : ordered_json(nullptr)}});
      run.metrics.push_back(m);
    }
    run.pags = vr.pags;
    r["batches"] = std::move(arr);
    r["warnings"] = vr.warnings;
    return run;
  }

  auto expert = make_expert(cfg, batches.front().names(), truth, seed);
  RunConfig rc = cfg.run;
  rc.seed = seed;
  const auto report = run_sequence(batches, rc, *expert, truth);
  const auto body = to_json(report);
  for (const auto& [key, value] : body.items()) {
    if (key != "schema_version") r[key] = value;
  }
  for (const auto& b : report.batches) {
    run.pags.push_back(b.refined);
    run.metrics.push_back(b.metrics);
  }
  return run;
}

namespace {

void write_discover(const DiscoverRun& run, const ExperimentConfig& cfg, const fs::path& dir) {
  make_dir(dir / "pags");
  write_text(dir / "report.json", run.report.dump(2) + "\n");
  ordered_json manifest;
  manifest["schema_version"] = kReportSchemaVersion;
  manifest["command"] = "discover";
  manifest["seed"] = run.seed;
  manifest["report"] = "report.json";
  manifest["metrics"] = "metrics.csv";
  auto files = ordered_json::array();
  for (std::size_t i = 0; i < run.pags.size(); ++i) {
    const auto name = batch_name(i, ".pag");
    write_text(dir / "pags" / name, serialize_pag(run.pags[i]));
    files.push_back("pags/" + name);
  }
  manifest["pags"] = std::move(files);
  manifest["config"] = to_json(cfg);
  write_text(dir / "metrics.csv", metrics_csv(run.metrics));
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

void cmd_simulate(const ExperimentConfig& cfg, const fs::path& out) {
  if (cfg.fixture.empty()) throw UsageError("simulate needs a fixture");
  const auto batches = load_batches(cfg, cfg.seed);
  make_dir(out);
  ordered_json manifest;
  manifest["schema_version"] = kReportSchemaVersion;
  manifest["command"] = "simulate";
  manifest["fixture"] = cfg.fixture;
  manifest["seed"] = cfg.seed;
  auto files = ordered_json::array();
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto name = batch_name(i, ".csv");
    write_csv_file((out / name).string(), batches[i]);
    files.push_back(name);
  }
  manifest["batches"] = std::move(files);
  manifest["batch_sizes"] = cfg.batch_sizes;
  write_text(out / "truth.json", dag_to_json(fixture(cfg.fixture).dag).dump(2) + "\n");
  manifest["truth"] = "truth.json";
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
}

void cmd_discover(const ExperimentConfig& cfg, std::optional<FciVariant> variant, const fs::path& out) {
  if (cfg.seeds == 1) {
    make_dir(out);
    write_discover(discover(cfg, variant, cfg.seed), cfg, out);
    return;
  }
  std::vector<std::future<DiscoverRun>> jobs;
  for (int k = 0; k < cfg.seeds; ++k) {
    jobs.push_back(std::async(std::launch::async, [&cfg, variant, k] {
      return discover(cfg, variant, cfg.seed + static_cast<std::uint64_t>(k));
    }));
  }
  std::vector<DiscoverRun> runs;
  for (auto& j : jobs) runs.push_back(j.get());
  make_dir(out);
  std::ostringstream summary;
  summary << std::setprecision(17) << "seed,final_mod_shd,final_f1\n";
  for (const auto& run : runs) {
    write_discover(run, cfg, out / ("seed_" + std::to_string(run.seed)));
    summary << run.seed << ',';
    const auto& last = run.metrics.back();
    if (last) summary << last->mod_shd;
    summary << ',';
    if (last) summary << last->f1;
    summary << '\n';
  }
  write_text(out / "summary.csv", summary.str());
}

SemParams params_from_json(const json& j) {
  SemParams p;
  try {
    for (const auto& w : j.at("weights")) {
      p.weights[{w.at(0).get<std::string>(), w.at(1).get<std::string>()}] = w.at(2).get<double>();
    }
    p.sigma2 = j.value("sigma2", 1.0);
  } catch (const json::exception& e) {
    throw UsageError(std::string("parameter file: ") + e.what());
  }
  return p;
}

void cmd_estimate(const ExperimentConfig& cfg, const fs::path& out) {
  Dag graph;
  std::optional<SemParams> truth;
  if (!cfg.graph_file.empty()) {
    graph = dag_from_json(read_json_file(cfg.graph_file, "graph file"));
  } else if (!cfg.fixture.empty()) {
    const auto spec = fixture(cfg.fixture);
    graph = spec.dag;
    if (spec.link == SemSpec::Link::Linear) truth = params_of(spec.dag, spec.noise_variance);
  } else {
    throw UsageError("estimate needs a graph file or a fixture");
  }
  if (!cfg.params_truth_file.empty()) truth = params_from_json(read_json_file(cfg.params_truth_file, "truth parameters"));
  const auto batches = load_batches(cfg, cfg.seed);
  std::vector<GaussianPrior> priors = cfg.priors;
  if (priors.empty()) priors.push_back(cfg.run.expert.prior.value_or(GaussianPrior{}));
  make_dir(out);
  EmConfig em = cfg.em;
  em.seed = derive_seed(cfg.seed, 4);
  for (std::size_t k = 0; k < priors.size(); ++k) {
    const auto res = fit_em(batches, graph, priors[k], cfg.rho, em, truth);
    ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["command"] = "estimate";
    j["prior"] = prior_json(priors[k]);
    j["rho"] = cfg.rho;
    auto arr = ordered_json::array();
    for (std::size_t b = 0; b < res.per_batch.size(); ++b) {
      ordered_json e;
      e["batch"] = b + 1;
      e["params"] = to_json(res.per_batch[b]);
      if (b < res.traces.size()) {
        e["objective"] = res.traces[b].marginal;
        e["e_steps"] = res.traces[b].e_steps;
        e["monotone"] = res.traces[b].monotone;
      }
      if (b < res.error.size()) e["l2_error"] = res.error[b];
      arr.push_back(std::move(e));
    }
    j["batches"] = std::move(arr);
    j["ridge"] = res.ridge;
    j["warnings"] = res.warnings;
    const auto stem = "prior_" + std::to_string(k + 1);
    write_text(out / ("params_" + stem + ".json"), j.dump(2) + "\n");
    if (!res.error.empty()) {
      std::ostringstream s;
      s << std::setprecision(17) << "batch,l2_error\n";
      for (std::size_t b = 0; b < res.error.size(); ++b) s << b + 1 << ',' << res.error[b] << '\n';
      write_text(out / ("error_" + stem + ".csv"), s.str());
    }
  }
}

ProbeRound probe_round(Expert& expert, const Dag& truth) {
  const auto obs = truth.observed();
  const auto& names = truth.variables();
  ProbeRound r;
  int true_edges = 0, correct = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (std::size_t j = i + 1; j < obs.size(); ++j) {
      const int a = obs[i], b = obs[j];
      const bool ab = truth.has_edge(a, b), ba = truth.has_edge(b, a);
      true_edges += ab || ba;
      EdgeCategory answer = EdgeCategory::NoEdge;
      try {
        answer = expert.query_edge(names[static_cast<std::size_t>(a)], names[static_cast<std::size_t>(b)], "").category;
      } catch (const ExpertError& e) {
        if (e.kind() == ExpertError::Kind::Authentication) throw;
        ++r.failed;
        continue;
      }
      if (answer == EdgeCategory::NoEdge) {
        r.shd += ab || ba;
        continue;
      }
      ++r.claimed;
      const bool hit = (answer == EdgeCategory::Directed && ab) || (answer == EdgeCategory::ReverseDirected && ba);
      correct += hit;
      if (!hit) ++r.shd;
    }
  }
  r.precision = r.claimed ? static_cast<double>(correct) / r.claimed : 0.0;
  r.recall = true_edges ? static_cast<double>(correct) / true_edges : 0.0;
  return r;
}

ordered_json cmd_probe(const ExperimentConfig& cfg, int rounds, const fs::path& out) {
  if (rounds < 1) throw UsageError("probe needs at least one round");
  const auto truth = load_truth(cfg);
  if (!truth) throw UsageError("probe needs a fixture or a truth file");
  auto expert = make_expert(cfg, truth->observed_names(), truth, cfg.seed);
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "probe";
  j["seed"] = cfg.seed;
  j["variables"] = truth->observed_names();
  auto arr = ordered_json::array();
  double shd = 0, prec = 0, rec = 0;
  for (int k = 0; k < rounds; ++k) {
    const auto r = probe_round(*expert, *truth);
    arr.push_back({{"round", k + 1},
                   {"shd", r.shd},
                   {"precision", r.precision},
                   {"recall", r.recall},
                   {"claimed", r.claimed},
                   {"failed", r.failed}});
    shd += r.shd;
    prec += r.precision;
    rec += r.recall;
  }
  j["rounds"] = std::move(arr);
  j["mean"] = {{"shd", shd / rounds}, {"precision", prec / rounds}, {"recall", rec / rounds}};
  make_dir(out);
  write_text(out / "probe.json", j.dump(2) + "\n");
  return j;
}

MetricReport cmd_evaluate(const std::string& pred_file, const std::string& truth_file) {
  require_file(pred_file, "predicted PAG file");
  const auto truth = dag_from_json(read_json_file(truth_file, "truth file"));
  std::ifstream in(pred_file);
  std::stringstream buf;
  buf << in.rdbuf();
  return evaluate(parse_pag(buf.str()), truth);
}

}  // namespace nlpscm::cli
