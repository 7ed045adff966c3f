#include "nlpscm/sem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/LU>

#include "nlpscm/error.hpp"

namespace nlpscm {

RootDistribution SemSpec::root(const std::string& name) const {
  const auto it = roots.find(name);
  return it == roots.end() ? RootDistribution{} : it->second;
}

BatchDataset simulate(const SemSpec& spec, Eigen::Index n, std::uint64_t seed, bool include_latent) {
  if (n < 1) throw InvalidArgument("simulate needs n >= 1");
  const Dag& dag = spec.dag;
  const auto d = static_cast<Eigen::Index>(dag.size());
  if (!dag.weighted() && !dag.edges().empty()) throw InvalidArgument("SEM needs a weighted DAG");
  if (spec.link == SemSpec::Link::Linear && !(spec.noise_variance > 0.0)) {
    throw InvalidArgument("noise variance must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double noise_sd = std::sqrt(spec.noise_variance);

  Eigen::MatrixXd full(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int v : dag.topological_order()) {
      const auto& name = dag.variables()[static_cast<std::size_t>(v)];
      const auto& parents = dag.parents(v);
      double value = 0.0;
      if (spec.link == SemSpec::Link::Linear) {
        if (parents.empty()) {
          const auto root = spec.root(name);
          value = root.mean + std::sqrt(root.variance) * normal(rng);
        } else {
          for (int p : parents) value += dag.weight(p, v) * full(r, p);
          value += noise_sd * normal(rng);
        }
      } else {
        const auto b = spec.bias.find(name);
        double eta = b == spec.bias.end() ? 0.0 : b->second;
        for (int p : parents) eta += dag.weight(p, v) * full(r, p);
        value = unit(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
      }
      full(r, v) = value;
    }
  }

  std::vector<int> keep;
  for (int v = 0; v < static_cast<int>(d); ++v) {
    if (include_latent || !dag.is_latent(v)) keep.push_back(v);
  }
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(keep.size()));
  std::vector<std::string> names;
  std::vector<VariableKind> kinds;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = full.col(keep[k]);
    names.push_back(dag.variables()[static_cast<std::size_t>(keep[k])]);
    kinds.push_back(spec.link == SemSpec::Link::Logistic ? VariableKind::categorical(2) : VariableKind::continuous());
  }
  return BatchDataset(std::move(out), std::move(names), std::move(kinds));
}

SemMoments implied_moments(const SemSpec& spec) {
  if (spec.link != SemSpec::Link::Linear) throw InvalidArgument("implied moments need a linear SEM");
  const Dag& dag = spec.dag;
  const auto d = static_cast<Eigen::Index>(dag.size());
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd noise(d);
  for (const auto& e : dag.edges()) b(e.to, e.from) = e.weight;
  for (Eigen::Index v = 0; v < d; ++v) {
    if (dag.parents(static_cast<int>(v)).empty()) {
      const auto root = spec.root(dag.variables()[static_cast<std::size_t>(v)]);
      m(v) = root.mean;
      noise(v) = root.variance;
    } else {
      noise(v) = spec.noise_variance;
    }
  }
  const Eigen::MatrixXd a = (Eigen::MatrixXd::Identity(d, d) - b).inverse();
  return {a * m, a * noise.asDiagonal() * a.transpose()};
}

double implied_correlation(const SemSpec& spec, const std::string& a, const std::string& b) {
  const auto mom = implied_moments(spec);
  const int i = spec.dag.index_of(a);
  const int j = spec.dag.index_of(b);
  return mom.covariance(i, j) / std::sqrt(mom.covariance(i, i) * mom.covariance(j, j));
}

std::vector<BatchDataset> split_batches(const BatchDataset& data, const std::vector<Eigen::Index>& sizes,
                                        const std::optional<SelectionBias>& bias, std::uint64_t seed) {
  for (auto s : sizes) {
    if (s < 0) throw InvalidArgument("batch sizes must be nonnegative");
  }
  const Eigen::Index total = std::accumulate(sizes.begin(), sizes.end(), Eigen::Index{0});
  if (total > data.rows()) {
    throw InvalidArgument("batch sizes sum to " + std::to_string(total) + " but only " + std::to_string(data.rows()) +
                          " rows are available");
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<BatchDataset> out;
  if (!bias) {
    std::size_t pos = 0;
    for (auto s : sizes) {
      std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                     order.begin() + static_cast<std::ptrdiff_t>(pos) + s);
      pos += static_cast<std::size_t>(s);
      out.push_back(data.select_rows(rows));
    }
    return out;
  }

  if (bias->p_in < 0 || bias->p_in > 1 || bias->p_out < 0 || bias->p_out > 1 || bias->p_in + bias->p_out <= 0) {
    throw InvalidArgument("selection-bias acceptance probabilities must lie in [0, 1] and not both be zero");
  }
  if (bias->quantile < 0 || bias->quantile > 1) throw InvalidArgument("selection-bias quantile must lie in [0, 1]");
  const int col = data.index_of(bias->variable);
  std::vector<double> values(data.data().col(col).data(), data.data().col(col).data() + data.rows());
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const auto qpos = static_cast<std::size_t>(std::floor(bias->quantile * static_cast<double>(sorted.size() - 1)));
  const double threshold = sorted[qpos];

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::Index> pool = order;
  for (auto s : sizes) {
    std::vector<Eigen::Index> rows;
    // Sweep the unused rows until the batch is full; each sweep accepts rows independently.
    while (static_cast<Eigen::Index>(rows.size()) < s) {
      if (pool.empty()) throw InvalidArgument("selection bias exhausted the rows before filling every batch");
      std::vector<Eigen::Index> rest;
      for (auto r : pool) {
        const bool in = values[static_cast<std::size_t>(r)] > threshold;
        if (static_cast<Eigen::Index>(rows.size()) < s && unit(rng) < (in ? bias->p_in : bias->p_out)) {
          rows.push_back(r);
        } else {
          rest.push_back(r);
        }
      }
      pool = std::move(rest);
    }
    out.push_back(data.select_rows(rows));
  }
  return out;
}

std::vector<std::string> fixture_names() {
  return {"earthquake", "asia", "user1", "user2", "wine_synth", "confounded_triangle"};
}

namespace {

Dag make_dag(const std::vector<std::string>& names, const std::vector<std::tuple<std::string, std::string, double>>& edges,
             const std::vector<std::string>& latents = {}) {
  auto idx = [&names](const std::string& n) {
    const auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw UnknownVariable(n);
    return static_cast<int>(it - names.begin());
  };
  std::vector<Dag::Edge> e;
  for (const auto& [from, to, w] : edges) e.push_back({idx(from), idx(to), w});
  std::vector<bool> latent(names.size(), false);
  for (const auto& l : latents) latent[static_cast<std::size_t>(idx(l))] = true;
  return Dag(names, std::move(e), true, std::move(latent));
}

}  // namespace

SemSpec fixture(const std::string& name) {
  SemSpec s;
  if (name == "earthquake") {
    s.dag = make_dag({"Burglary", "Earthquake", "Alarm", "JohnCalls", "MaryCalls"},
                     {{"Burglary", "Alarm", 3.0}, {"Earthquake", "Alarm", 3.0},
                      {"Alarm", "JohnCalls", 4.0}, {"Alarm", "MaryCalls", 3.8}});
    s.link = SemSpec::Link::Logistic;
    s.bias = {{"Burglary", -0.8}, {"Earthquake", -0.8}, {"Alarm", -2.5}, {"JohnCalls", -2.0}, {"MaryCalls", -2.2}};
  } else if (name == "asia") {
    s.dag = make_dag({"VisitToAsia", "Smoking", "Tuberculosis", "LungCancer", "Bronchitis", "Either", "XRay", "Dyspnea"},
                     {{"VisitToAsia", "Tuberculosis", 3.0}, {"Smoking", "LungCancer", 3.0},
                      {"Smoking", "Bronchitis", 3.0}, {"Tuberculosis", "Either", 3.5},
                      {"LungCancer", "Either", 3.5}, {"Either", "XRay", 4.0},
                      {"Either", "Dyspnea", 3.0}, {"Bronchitis", "Dyspnea", 3.0}});
    s.link = SemSpec::Link::Logistic;
    s.bias = {{"VisitToAsia", -0.5}, {"Smoking", 0.0},  {"Tuberculosis", -2.0}, {"LungCancer", -2.0},
              {"Bronchitis", -1.5},  {"Either", -2.0}, {"XRay", -2.0},        {"Dyspnea", -2.5}};
  } else if (name == "user1") {
    const std::string p2t = "ProximityToTransaction", cart = "AddToCart", click = "ProductClicks",
                      ios = "SessionsIOS", android = "PromoHitsAndroid", cheap = "CheapProductsViewed",
                      page = "PageHits", time = "TimeSpentPerSession", others = "PromoHitsOthers";
    s.dag = make_dag({p2t, cart, click, ios, android, cheap, page, time, others},
                     {{p2t, cart, 0.12},     {cart, click, 0.24},     {cart, ios, 0.18},      {cart, android, 0.38},
                      {cart, cheap, 0.52},   {cart, page, 0.40},      {click, ios, 0.23},     {click, android, 0.15},
                      {click, cheap, 0.32},  {click, page, 0.15},     {android, cheap, 0.13}, {android, page, 0.32},
                      {android, time, 0.17}, {android, others, 0.63}, {cheap, page, 0.25},    {cheap, others, 0.29},
                      {page, time, 0.65},    {page, others, 0.11},    {time, others, -0.09}});
    s.noise_variance = 0.05;
    s.roots = {{p2t, {10.0, 1.0}}};
  } else if (name == "user2") {
    const std::string urls = "UniqueURLs", hits = "Hits", time = "TimeSpent", days = "ActiveDaysLastMonth",
                      sessions = "SessionsLastMonth", hits_lm = "HitsLastMonth", pages_lm = "PageHitsLastMonth",
                      social = "SocialNetworkHits";
    s.dag = make_dag({urls, hits, time, days, sessions, hits_lm, pages_lm, social},
                     {{urls, hits, 0.87},      {hits, time, 0.61},      {days, time, -0.71},
                      {sessions, time, 0.94},  {pages_lm, urls, 0.19},  {sessions, days, 1.11},
                      {hits_lm, days, 0.46},   {pages_lm, days, -0.62}, {urls, sessions, -0.11},
                      {pages_lm, sessions, 0.90}, {pages_lm, hits_lm, 1.06}, {hits, social, 1.0}});
    s.noise_variance = 0.05;
    s.roots = {{pages_lm, {27.0, 10.5}}};
  } else if (name == "wine_synth") {
    // Weights put corr(alcohol, density) near -0.50 and corr(alcohol, quality) near 0.48.
    s.dag = make_dag({"residual_sugar", "density", "volatile_acidity", "total_sulfur_dioxide", "alcohol_content",
                      "quality"},
                     {{"residual_sugar", "density", 0.5}, {"residual_sugar", "total_sulfur_dioxide", 0.3},
                      {"alcohol_content", "density", -0.65}, {"volatile_acidity", "quality", -0.4},
                      {"quality", "total_sulfur_dioxide", 0.4}, {"alcohol_content", "quality", 0.59}},
                     {"alcohol_content"});
    s.noise_variance = 1.0;
    s.roots = {{"residual_sugar", {2.5, 1.0}}, {"volatile_acidity", {0.5, 1.0}}, {"alcohol_content", {11.0, 1.0}}};
  } else if (name == "confounded_triangle") {
    s.dag = make_dag({"alcohol_content", "density", "quality"},
                     {{"alcohol_content", "density", 0.8}, {"alcohol_content", "quality", 0.5},
                      {"density", "quality", 0.6}},
                     {"alcohol_content"});
    s.noise_variance = 1.0;
    s.roots = {{"alcohol_content", {11.0, 1.0}}};
  } else {
    throw InvalidArgument("unknown fixture: " + name);
  }
  return s;
}

}  // namespace nlpscm
