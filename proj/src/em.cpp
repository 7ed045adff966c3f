#include "nlpscm/em.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "nlpscm/error.hpp"

namespace nlpscm {

namespace {

constexpr double kRidge = 1e-6;
constexpr double kSigma2Floor = 1e-12;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Eigen::VectorXd column_of(const BatchDataset& data, const std::string& name) {
  return data.data().col(data.index_of(name));
}

}  // namespace

double param_error(const SemParams& estimate, const SemParams& truth) {
  if (estimate.weights.size() != truth.weights.size()) throw InvalidArgument("parameter sets have different edges");
  double sum = 0.0;
  for (const auto& [key, w] : truth.weights) {
    const auto it = estimate.weights.find(key);
    if (it == estimate.weights.end()) {
      throw InvalidArgument("parameter sets differ at edge " + key.first + " -> " + key.second);
    }
    sum += (it->second - w) * (it->second - w);
  }
  return std::sqrt(sum);
}

SemParams params_of(const Dag& dag, double noise_variance) {
  SemParams p;
  for (const auto& e : dag.edges()) {
    p.weights[{dag.variables()[static_cast<std::size_t>(e.from)], dag.variables()[static_cast<std::size_t>(e.to)]}] =
        e.weight;
  }
  p.sigma2 = noise_variance;
  return p;
}

nlohmann::ordered_json to_json(const SemParams& params) {
  nlohmann::ordered_json j;
  auto w = nlohmann::ordered_json::array();
  for (const auto& [key, value] : params.weights) w.push_back({key.first, key.second, value});
  j["weights"] = std::move(w);
  j["sigma2"] = params.sigma2;
  return j;
}

WarmStart mle_warm_start(const BatchDataset& data, const Dag& graph) {
  WarmStart out;
  const auto n = data.rows();
  if (n < 1) throw DegenerateData("warm start needs at least one row");
  double ssr = 0.0;
  int fitted = 0;
  for (int v = 0; v < static_cast<int>(graph.size()); ++v) {
    if (graph.is_latent(v)) continue;
    std::vector<int> parents;
    for (int p : graph.parents(v)) {
      if (!graph.is_latent(p)) parents.push_back(p);
    }
    if (parents.empty()) continue;
    const auto k = static_cast<Eigen::Index>(parents.size());
    Eigen::MatrixXd x(n, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      x.col(j) = column_of(data, graph.variables()[static_cast<std::size_t>(parents[static_cast<std::size_t>(j)])]);
    }
    const Eigen::VectorXd y = column_of(data, graph.variables()[static_cast<std::size_t>(v)]);
    const Eigen::MatrixXd gram = x.transpose() * x;
    const Eigen::VectorXd rhs = x.transpose() * y;
    Eigen::VectorXd beta;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < k) {
      out.ridge = true;
      beta = (gram + kRidge * Eigen::MatrixXd::Identity(k, k)).ldlt().solve(rhs);
    } else {
      beta = gram.ldlt().solve(rhs);
    }
    ssr += (y - x * beta).squaredNorm();
    ++fitted;
    for (Eigen::Index j = 0; j < k; ++j) {
      out.params.weights[{graph.variables()[static_cast<std::size_t>(parents[static_cast<std::size_t>(j)])],
                          graph.variables()[static_cast<std::size_t>(v)]}] = beta(j);
    }
  }
  if (fitted > 0) {
    out.params.sigma2 = ssr / (static_cast<double>(n) * fitted);
  } else {
    const auto& m = data.data();
    const Eigen::RowVectorXd mean = m.colwise().mean();
    out.params.sigma2 = (m.rowwise() - mean).squaredNorm() / (static_cast<double>(n) * static_cast<double>(m.cols()));
  }
  if (!(out.params.sigma2 > 0.0)) out.params.sigma2 = kSigma2Floor;
  return out;
}

// ---------------------------------------------------------------- LatentSem

LatentSem::LatentSem(const BatchDataset& data, const Dag& graph, GaussianPrior prior)
    : graph_(graph), prior_(prior) {
  const auto latents = graph_.latents();
  if (latents.size() != 1) throw InvalidArgument("latent SEM needs exactly one latent node");
  latent_ = latents.front();
  if (!graph_.parents(latent_).empty()) throw InvalidArgument("the latent node must be a root");
  if (!(prior_.variance > 0.0)) throw InvalidArgument("prior variance must be positive");
  const auto d = static_cast<Eigen::Index>(graph_.size());
  x_ = Eigen::MatrixXd::Zero(data.rows(), d);
  for (Eigen::Index v = 0; v < d; ++v) {
    if (v == latent_) continue;
    x_.col(v) = column_of(data, graph_.variables()[static_cast<std::size_t>(v)]);
  }
  for (int v = 0; v < static_cast<int>(d); ++v) {
    if (v == latent_ || graph_.parents(v).empty()) continue;
    const int slot = static_cast<int>(nodes_.size());
    nodes_.push_back(v);
    latent_edge_.push_back(-1);
    for (int p : graph_.parents(v)) {
      if (p == latent_) latent_edge_.back() = static_cast<int>(edges_.size());
      edges_.push_back({p, v, p == latent_});
      edge_node_.push_back(slot);
    }
  }
  target_.assign(edges_.size(), std::nullopt);
}

Eigen::VectorXd LatentSem::pack(const SemParams& params) const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(edges_.size()));
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto key = std::make_pair(graph_.variables()[static_cast<std::size_t>(edges_[e].from)],
                                    graph_.variables()[static_cast<std::size_t>(edges_[e].to)]);
    const auto it = params.weights.find(key);
    theta(static_cast<Eigen::Index>(e)) = it == params.weights.end() ? 0.0 : it->second;
  }
  return theta;
}

SemParams LatentSem::unpack(const Eigen::VectorXd& theta, double sigma2) const {
  SemParams p;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    p.weights[{graph_.variables()[static_cast<std::size_t>(edges_[e].from)],
               graph_.variables()[static_cast<std::size_t>(edges_[e].to)]}] = theta(static_cast<Eigen::Index>(e));
  }
  p.sigma2 = sigma2;
  return p;
}

void LatentSem::set_penalty(const std::map<std::string, double>& rho, double lambda) {
  if (lambda < 0) throw InvalidArgument("lambda must be nonnegative");
  lambda_ = lambda;
  const double sd_latent = std::sqrt(prior_.variance);
  const auto n = static_cast<double>(x_.rows());
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    target_[e].reset();
    if (!edges_[e].latent) continue;
    const auto& child = graph_.variables()[static_cast<std::size_t>(edges_[e].to)];
    const auto it = rho.find(child);
    if (it == rho.end()) continue;
    const auto col = x_.col(edges_[e].to);
    const double mean = col.mean();
    const double sd = n > 1 ? std::sqrt((col.array() - mean).square().sum() / (n - 1)) : 0.0;
    target_[e] = it->second * sd / sd_latent;
  }
}

Eigen::MatrixXd LatentSem::residuals(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd r(x_.rows(), static_cast<Eigen::Index>(nodes_.size()));
  for (std::size_t k = 0; k < nodes_.size(); ++k) r.col(static_cast<Eigen::Index>(k)) = x_.col(nodes_[k]);
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (edges_[e].latent) continue;
    r.col(edge_node_[e]) -= theta(static_cast<Eigen::Index>(e)) * x_.col(edges_[e].from);
  }
  return r;
}

Eigen::VectorXd LatentSem::latent_weights(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nodes_.size()));
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (latent_edge_[k] >= 0) w(static_cast<Eigen::Index>(k)) = theta(latent_edge_[k]);
  }
  return w;
}

LatentPosterior LatentSem::e_step(const Eigen::VectorXd& theta, double sigma2) const {
  if (!(sigma2 > 0.0)) throw InvalidArgument("noise variance must be positive");
  const Eigen::VectorXd w = latent_weights(theta);
  const double precision = 1.0 / prior_.variance + w.squaredNorm() / sigma2;
  LatentPosterior post;
  post.variance = 1.0 / precision;
  post.mean = post.variance * ((residuals(theta) * w).array() / sigma2 + prior_.mean / prior_.variance).matrix();
  return post;
}

double LatentSem::expected_loglik(const Eigen::VectorXd& theta, double sigma2, const LatentPosterior& post) const {
  const Eigen::VectorXd w = latent_weights(theta);
  const Eigen::MatrixXd err = residuals(theta) - post.mean * w.transpose();
  const auto k = static_cast<double>(nodes_.size());
  const auto n = static_cast<double>(x_.rows());
  const double sq = err.squaredNorm() + n * w.squaredNorm() * post.variance;
  return -0.5 * n * k * (kLog2Pi + std::log(sigma2)) - sq / (2.0 * sigma2);
}

Eigen::VectorXd LatentSem::expected_loglik_gradient(const Eigen::VectorXd& theta, double sigma2,
                                                    const LatentPosterior& post) const {
  const Eigen::VectorXd w = latent_weights(theta);
  const Eigen::MatrixXd err = residuals(theta) - post.mean * w.transpose();
  const auto n = static_cast<double>(x_.rows());
  Eigen::VectorXd g(theta.size());
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto col = err.col(edge_node_[e]);
    const double v = edges_[e].latent ? col.dot(post.mean) - n * theta(static_cast<Eigen::Index>(e)) * post.variance
                                      : col.dot(x_.col(edges_[e].from));
    g(static_cast<Eigen::Index>(e)) = v / sigma2;
  }
  return g;
}

double LatentSem::penalty(const Eigen::VectorXd& theta) const {
  double sq = 0.0;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (target_[e]) sq += std::pow(theta(static_cast<Eigen::Index>(e)) - *target_[e], 2);
  }
  return lambda_ * std::sqrt(sq);
}

Eigen::VectorXd LatentSem::penalty_subgradient(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd diff = Eigen::VectorXd::Zero(theta.size());
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (target_[e]) diff(static_cast<Eigen::Index>(e)) = theta(static_cast<Eigen::Index>(e)) - *target_[e];
  }
  const double norm = diff.norm();
  if (norm == 0.0) return diff;
  return lambda_ * diff / norm;
}

double LatentSem::objective(const Eigen::VectorXd& theta, double sigma2, const LatentPosterior& post) const {
  return expected_loglik(theta, sigma2, post) - penalty(theta);
}

double LatentSem::optimal_sigma2(const Eigen::VectorXd& theta, const LatentPosterior& post) const {
  const Eigen::VectorXd w = latent_weights(theta);
  const Eigen::MatrixXd err = residuals(theta) - post.mean * w.transpose();
  const auto k = static_cast<double>(nodes_.size());
  const double s = (err.squaredNorm() / static_cast<double>(x_.rows()) + w.squaredNorm() * post.variance) / k;
  return std::max(s, kSigma2Floor);
}

double LatentSem::penalized_marginal_loglik(const Eigen::VectorXd& theta, double sigma2) const {
  const Eigen::VectorXd w = latent_weights(theta);
  const Eigen::MatrixXd r = residuals(theta);
  const auto n = static_cast<double>(x_.rows());
  double total = 0.0;
  std::vector<Eigen::Index> with_latent;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    if (latent_edge_[k] >= 0) {
      with_latent.push_back(kk);
      continue;
    }
    total += -0.5 * n * (kLog2Pi + std::log(sigma2)) - r.col(kk).squaredNorm() / (2.0 * sigma2);
  }
  if (!with_latent.empty()) {
    const auto c = static_cast<Eigen::Index>(with_latent.size());
    Eigen::MatrixXd u(x_.rows(), c);
    Eigen::VectorXd wc(c);
    for (Eigen::Index j = 0; j < c; ++j) {
      wc(j) = w(with_latent[static_cast<std::size_t>(j)]);
      u.col(j) = r.col(with_latent[static_cast<std::size_t>(j)]).array() - wc(j) * prior_.mean;
    }
    const double s = prior_.variance;
    const double a = sigma2 + s * wc.squaredNorm();
    const Eigen::VectorXd proj = u * wc;
    const double quad = (u.squaredNorm() - s * proj.squaredNorm() / a) / sigma2;
    const double logdet = static_cast<double>(c) * std::log(sigma2) + std::log(a / sigma2);
    total += -0.5 * (n * (static_cast<double>(c) * kLog2Pi + logdet) + quad);
  }
  return total - penalty(theta);
}

LatentSem::MStepResult LatentSem::m_step(Eigen::VectorXd theta, double sigma2, const LatentPosterior& post,
                                         const EmConfig& cfg) const {
  MStepResult out{std::move(theta), sigma2, {}};
  double obj = objective(out.theta, out.sigma2, post);
  out.objective_trace.push_back(obj);
  for (int step = 0; step < cfg.max_m_steps; ++step) {
    const Eigen::VectorXd g = expected_loglik_gradient(out.theta, out.sigma2, post) - penalty_subgradient(out.theta);
    if (!g.allFinite()) throw DegenerateData("non-finite gradient in the M-step");
    if (g.norm() == 0.0) break;
    double rate = cfg.eta;
    bool accepted = false;
    for (int bt = 0; bt <= cfg.max_backtracks; ++bt, rate *= 0.5) {
      const Eigen::VectorXd cand = out.theta + rate * g;
      const double cand_obj = objective(cand, out.sigma2, post);
      if (std::isfinite(cand_obj) && cand_obj >= obj) {
        out.theta = cand;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    out.sigma2 = optimal_sigma2(out.theta, post);
    obj = objective(out.theta, out.sigma2, post);
    out.objective_trace.push_back(obj);
  }
  return out;
}

// ---------------------------------------------------------------- fit_em

EmResult fit_em(const std::vector<BatchDataset>& batches, const Dag& graph, const GaussianPrior& prior,
                const std::map<std::string, double>& rho, const EmConfig& cfg, const std::optional<SemParams>& truth) {
  if (batches.empty()) throw InvalidArgument("EM needs at least one batch");
  if (cfg.eta <= 0) throw InvalidArgument("learning rate must be positive");
  if (cfg.lambda < 0) throw InvalidArgument("lambda must be nonnegative");
  EmResult result;
  auto record = [&](const SemParams& p) {
    result.per_batch.push_back(p);
    if (truth) result.error.push_back(param_error(p, *truth));
  };

  if (graph.latents().empty()) {
    for (const auto& batch : batches) {
      auto ws = mle_warm_start(batch, graph);
      result.ridge |= ws.ridge;
      record(ws.params);
      result.traces.push_back({});
    }
    return result;
  }

  Eigen::VectorXd theta;
  double sigma2 = 1.0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    LatentSem model(batches[b], graph, prior);
    model.set_penalty(rho, cfg.lambda);
    if (b == 0) {
      auto ws = mle_warm_start(batches[b], graph);
      result.ridge = ws.ridge;
      if (ws.ridge) result.warnings.push_back("warm start used ridge regularization");
      theta = model.pack(ws.params);
      sigma2 = ws.params.sigma2;
      std::mt19937_64 rng(cfg.seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      const auto targets = model.penalty_target();
      for (std::size_t e = 0; e < model.edges().size(); ++e) {
        if (!model.edges()[e].latent) continue;
        theta(static_cast<Eigen::Index>(e)) = targets[e] ? *targets[e] : normal(rng);
      }
    }
    EmBatchTrace trace;
    double prev = model.penalized_marginal_loglik(theta, sigma2);
    trace.marginal.push_back(prev);
    for (int it = 0; it < cfg.max_e_steps; ++it) {
      const auto post = model.e_step(theta, sigma2);
      auto m = model.m_step(theta, sigma2, post, cfg);
      theta = std::move(m.theta);
      sigma2 = m.sigma2;
      const double cur = model.penalized_marginal_loglik(theta, sigma2);
      trace.marginal.push_back(cur);
      ++trace.e_steps;
      if (cur < prev - 1e-9 * (1.0 + std::abs(prev))) trace.monotone = false;
      if (std::abs(cur - prev) <= cfg.tolerance * (1.0 + std::abs(prev))) break;
      prev = cur;
    }
    if (!trace.monotone) result.warnings.push_back("objective decreased in batch " + std::to_string(b + 1));
    result.traces.push_back(std::move(trace));
    record(model.unpack(theta, sigma2));
  }
  return result;
}

}  // namespace nlpscm
