#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nlpscm/dataset.hpp"
#include "nlpscm/graph.hpp"

namespace nlpscm {

struct CiDecision {
  bool independent = false;
  double p_value = 0.0;
  double statistic = 0.0;
};

/// Conditional-independence judge over a fixed variable list. Independence is
/// declared iff p_value > alpha; a tie at alpha counts as dependent.
class CiTest {
 public:
  explicit CiTest(double alpha) : alpha_(alpha) {}
  virtual ~CiTest() = default;

  virtual CiDecision test(int x, int y, std::span<const int> z) const = 0;
  virtual const std::vector<std::string>& variables() const = 0;
  double alpha() const { return alpha_; }

 protected:
  bool decide(double p) const { return p > alpha_; }

 private:
  double alpha_;
};

/// Two-sided standard normal tail probability P(|N(0,1)| > z).
double normal_two_sided_p(double z);
/// Upper tail of the chi-square distribution with `dof` degrees of freedom.
double chi_square_sf(double statistic, double dof);

/// Partial correlation of columns x, y given z from a correlation matrix.
/// Inverts the correlation submatrix; falls back to a pseudo-inverse when the
/// submatrix condition number exceeds 1e12.
double partial_correlation(const Eigen::MatrixXd& correlation, int x, int y, std::span<const int> z);

/// Fisher-Z test for continuous data. |r| is clamped to 1 - 1e-12.
class FisherZTest final : public CiTest {
 public:
  FisherZTest(const BatchDataset& data, double alpha);
  CiDecision test(int x, int y, std::span<const int> z) const override;
  const std::vector<std::string>& variables() const override { return names_; }
  const Eigen::MatrixXd& correlation() const { return corr_; }

 private:
  std::vector<std::string> names_;
  Eigen::MatrixXd corr_;
  std::vector<bool> constant_;
  Eigen::Index n_;
};

/// Stratified Pearson chi-square test for categorical data. Strata with fewer
/// than kStratumFloor rows are skipped.
class ChiSquareTest final : public CiTest {
 public:
  static constexpr Eigen::Index kStratumFloor = 5;

  ChiSquareTest(const BatchDataset& data, double alpha);
  CiDecision test(int x, int y, std::span<const int> z) const override;
  const std::vector<std::string>& variables() const override { return names_; }

 private:
  std::vector<std::string> names_;
  // Level codes remapped to 0..k-1 per column.
  std::vector<std::vector<int>> codes_;
  std::vector<int> level_count_;
};

/// Perfect-information test answering with d-separation in a DAG. Only the
/// observed variables are exposed; latents are never conditioned on.
class OracleTest final : public CiTest {
 public:
  explicit OracleTest(Dag dag, double alpha = 0.5);
  CiDecision test(int x, int y, std::span<const int> z) const override;
  const std::vector<std::string>& variables() const override { return names_; }

 private:
  Dag dag_;
  std::vector<int> observed_;
  std::vector<std::string> names_;
};

std::unique_ptr<CiTest> oracle_ci(const Dag& dag);

/// Chi-square when every column is categorical, Fisher-Z otherwise.
std::unique_ptr<CiTest> make_data_test(const BatchDataset& data, double alpha);

}  // namespace nlpscm
