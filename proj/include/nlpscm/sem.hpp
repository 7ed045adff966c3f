#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nlpscm/dataset.hpp"
#include "nlpscm/graph.hpp"

namespace nlpscm {

struct RootDistribution {
  double mean = 0.0;
  double variance = 1.0;
};

/// Structural equation model over a weighted DAG. Linear models draw roots
/// from their Gaussians and add N(0, noise_variance) to every other node.
/// Logistic models emit 0/1 columns with P(x = 1) = sigmoid(bias + sum w x_parent).
struct SemSpec {
  enum class Link { Linear, Logistic };

  Dag dag;
  Link link = Link::Linear;
  double noise_variance = 1.0;
  std::map<std::string, RootDistribution> roots;
  std::map<std::string, double> bias;

  RootDistribution root(const std::string& name) const;
};

/// Observed columns only, unless include_latent is set.
BatchDataset simulate(const SemSpec& spec, Eigen::Index n, std::uint64_t seed, bool include_latent = false);

struct SemMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Closed-form mean (I - B)^-1 m and covariance (I - B)^-1 D (I - B)^-T over
/// all nodes in DAG order. Linear models only.
SemMoments implied_moments(const SemSpec& spec);
double implied_correlation(const SemSpec& spec, const std::string& a, const std::string& b);

/// Rows whose `variable` exceeds its `quantile` are accepted with p_in, the rest with p_out.
struct SelectionBias {
  std::string variable;
  double quantile = 0.5;
  double p_in = 0.9;
  double p_out = 0.1;
};

/// Disjoint batches drawn without replacement. With bias, batches are filled
/// by rejection sampling over the rows not yet used.
std::vector<BatchDataset> split_batches(const BatchDataset& data, const std::vector<Eigen::Index>& sizes,
                                        const std::optional<SelectionBias>& bias, std::uint64_t seed);

std::vector<std::string> fixture_names();
/// earthquake, asia, user1, user2, wine_synth, confounded_triangle.
SemSpec fixture(const std::string& name);

}  // namespace nlpscm
