#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "nlpscm/dataset.hpp"
#include "nlpscm/expert.hpp"
#include "nlpscm/graph.hpp"

namespace nlpscm {

/// Edge weights keyed by (parent, child) name plus one pooled noise variance.
struct SemParams {
  std::map<std::pair<std::string, std::string>, double> weights;
  double sigma2 = 1.0;
};

/// Euclidean norm of the weight difference; sigma2 is ignored. Throws on key mismatch.
double param_error(const SemParams& estimate, const SemParams& truth);

/// Weights and noise variance of a weighted DAG.
SemParams params_of(const Dag& dag, double noise_variance);

nlohmann::ordered_json to_json(const SemParams& params);

struct EmConfig {
  double eta = 0.001;
  int max_e_steps = 20;
  int max_m_steps = 50;
  double lambda = 5.0;
  /// Relative change of the monitored objective that ends a batch early.
  double tolerance = 1e-8;
  /// Step halvings tried before an M-step gives up.
  int max_backtracks = 40;
  std::uint64_t seed = 0;
};

struct LatentPosterior {
  Eigen::VectorXd mean;
  double variance = 1.0;
};

struct WarmStart {
  SemParams params;
  bool ridge = false;
};

/// Per-node least squares on observed parents; sigma2 is the pooled residual
/// variance, or the pooled sample variance when no node has parents. Edges out
/// of latent nodes are ignored. A rank-deficient design uses ridge 1e-6.
WarmStart mle_warm_start(const BatchDataset& data, const Dag& graph);

/// Linear-Gaussian SEM with one latent root over one batch. The likelihood
/// covers every observed node with at least one parent; observed roots are
/// treated as exogenous. Parameters are packed as a vector in the order of
/// `edges()`.
class LatentSem {
 public:
  LatentSem(const BatchDataset& data, const Dag& graph, GaussianPrior prior);

  struct ModelEdge {
    int from;  // graph index
    int to;    // graph index
    bool latent;
  };
  const std::vector<ModelEdge>& edges() const { return edges_; }
  int latent() const { return latent_; }
  const Dag& graph() const { return graph_; }

  Eigen::VectorXd pack(const SemParams& params) const;
  SemParams unpack(const Eigen::VectorXd& theta, double sigma2) const;

  /// Sets the penalty lambda * || theta_L - target ||_2. Children without a
  /// correlation are left out of the penalty.
  void set_penalty(const std::map<std::string, double>& rho, double lambda);
  /// rho * sd(child) / prior sd per latent edge; nullopt where rho is absent.
  std::vector<std::optional<double>> penalty_target() const { return target_; }

  LatentPosterior e_step(const Eigen::VectorXd& theta, double sigma2) const;

  /// Expected complete-data log-likelihood summed over rows.
  double expected_loglik(const Eigen::VectorXd& theta, double sigma2, const LatentPosterior& post) const;
  Eigen::VectorXd expected_loglik_gradient(const Eigen::VectorXd& theta, double sigma2,
                                           const LatentPosterior& post) const;
  double penalty(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd penalty_subgradient(const Eigen::VectorXd& theta) const;
  /// expected_loglik - penalty.
  double objective(const Eigen::VectorXd& theta, double sigma2, const LatentPosterior& post) const;
  /// Closed-form sigma2 maximizing the expected log-likelihood.
  double optimal_sigma2(const Eigen::VectorXd& theta, const LatentPosterior& post) const;
  /// log p(observed | theta, sigma2) summed over rows with the latent integrated out, minus the penalty.
  double penalized_marginal_loglik(const Eigen::VectorXd& theta, double sigma2) const;

  struct MStepResult {
    Eigen::VectorXd theta;
    double sigma2;
    std::vector<double> objective_trace;
  };
  /// Gradient ascent with backtracking; sigma2 is refreshed after every accepted step.
  MStepResult m_step(Eigen::VectorXd theta, double sigma2, const LatentPosterior& post, const EmConfig& cfg) const;

 private:
  // Residual of node row k: x_v - sum of observed-parent terms.
  Eigen::MatrixXd residuals(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd latent_weights(const Eigen::VectorXd& theta) const;

  Dag graph_;
  GaussianPrior prior_;
  int latent_ = -1;
  Eigen::MatrixXd x_;              // n x |graph|, latent column unused
  std::vector<int> nodes_;         // likelihood nodes (graph indices)
  std::vector<ModelEdge> edges_;
  std::vector<int> edge_node_;     // position in nodes_ for each edge
  std::vector<int> latent_edge_;   // per node slot: edge index of the latent edge, or -1
  std::vector<std::optional<double>> target_;  // per edge; only latent edges
  double lambda_ = 0.0;
};

struct EmBatchTrace {
  std::vector<double> marginal;  // monitored objective after each E/M alternation
  int e_steps = 0;
  bool monotone = true;
};

struct EmResult {
  std::vector<SemParams> per_batch;
  std::vector<double> error;  // filled when a truth is supplied
  std::vector<EmBatchTrace> traces;
  bool ridge = false;
  std::vector<std::string> warnings;
};

/// Warm start on the first batch, theta_L from rho (or random when rho is
/// empty), then E/M alternation per batch with parameters carried forward.
/// Without a latent every batch gets its own warm start.
EmResult fit_em(const std::vector<BatchDataset>& batches, const Dag& graph, const GaussianPrior& prior,
                const std::map<std::string, double>& rho, const EmConfig& cfg,
                const std::optional<SemParams>& truth = std::nullopt);

}  // namespace nlpscm
