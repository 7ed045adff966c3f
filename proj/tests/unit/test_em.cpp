#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/QR>

#include "doctest.h"
#include "helpers.hpp"
#include "nlpscm/em.hpp"
#include "nlpscm/error.hpp"
#include "nlpscm/sem.hpp"

using namespace nlpscm;

namespace {

SemSpec triangle(double la, double lb, double ab, double latent_mean = 0.0) {
  SemSpec s;
  s.dag = Dag({"L", "A", "B"}, {{0, 1, la}, {0, 2, lb}, {1, 2, ab}}, true, {true, false, false});
  s.roots = {{"L", {latent_mean, 1.0}}};
  return s;
}

/// Marginal density of one row's likelihood nodes with L integrated out, by quadrature.
double quadrature_marginal(double prior_mean, double prior_var, const std::vector<double>& resid,
                           const std::vector<double>& w, double sigma2) {
  const double c = -0.5 * std::log(2 * std::numbers::pi * prior_var) -
                   0.5 * static_cast<double>(w.size()) * std::log(2 * std::numbers::pi * sigma2);
  auto log_joint = [&](double l) {
    double s = -0.5 * (l - prior_mean) * (l - prior_mean) / prior_var;
    for (std::size_t k = 0; k < w.size(); ++k) s -= 0.5 * std::pow(resid[k] - w[k] * l, 2) / sigma2;
    return s;
  };
  double best = -1e300;
  for (double l = prior_mean - 30; l <= prior_mean + 30; l += 0.01) best = std::max(best, log_joint(l));
  const double z =
      oracle::simpson([&](double l) { return std::exp(log_joint(l) - best); }, prior_mean - 30, prior_mean + 30, 20000);
  return c + best + std::log(z);
}

}  // namespace

TEST_CASE("param error") {
  SemParams a, b;
  a.weights = {{{"A", "B"}, 0.5}, {{"B", "C"}, 1.0}};
  b = a;
  CHECK(param_error(a, b) == 0.0);
  b.weights[{"A", "B"}] = 0.8;
  CHECK(param_error(a, b) == doctest::Approx(0.3));
  b.weights[{"B", "C"}] = 1.4;
  CHECK(param_error(a, b) == doctest::Approx(0.5));
  b.weights.erase({"B", "C"});
  b.weights[{"A", "C"}] = 1.0;
  CHECK_THROWS_AS(param_error(a, b), InvalidArgument);
}

TEST_CASE("warm start recovers a single edge") {
  SemSpec s;
  s.dag = Dag({"A", "B"}, {{0, 1, 0.6}}, true);
  const auto d = simulate(s, 5000, 4);
  const auto ws = mle_warm_start(d, s.dag);
  CHECK_FALSE(ws.ridge);
  CHECK(std::abs(ws.params.weights.at({"A", "B"}) - 0.6) < 0.03);
  CHECK(ws.params.sigma2 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("warm start without parents uses the sample variance") {
  Eigen::MatrixXd m(4, 1);
  m << 1, 2, 3, 6;
  const auto ws = mle_warm_start(BatchDataset(m, {"A"}), Dag({"A"}, {}, true));
  CHECK(ws.params.weights.empty());
  CHECK(ws.params.sigma2 == doctest::Approx(3.5));
}

TEST_CASE("warm start falls back to ridge on duplicate parents") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(200, 3);
  for (int r = 0; r < 200; ++r) {
    m(r, 0) = z(rng);
    m(r, 1) = m(r, 0);
    m(r, 2) = m(r, 0) + 0.1 * z(rng);
  }
  const Dag g({"P", "Q", "Y"}, {{0, 2, 1.0}, {1, 2, 1.0}}, true);
  const auto ws = mle_warm_start(BatchDataset(m, {"P", "Q", "Y"}), g);
  CHECK(ws.ridge);
  CHECK(std::isfinite(ws.params.weights.at({"P", "Y"})));
  CHECK(ws.params.weights.at({"P", "Y"}) + ws.params.weights.at({"Q", "Y"}) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("latent sem needs exactly one latent root") {
  const auto spec = triangle(0.8, 0.5, 0.6);
  const auto d = simulate(spec, 10, 1);
  CHECK_NOTHROW(LatentSem(d, spec.dag, {0, 1}));
  CHECK_THROWS_AS(LatentSem(d, Dag({"L", "A", "B"}, {{0, 1, 1}}, true), {0, 1}), InvalidArgument);
  CHECK_THROWS_AS(LatentSem(d, spec.dag, {0, 0}), InvalidArgument);
  const Dag parented({"A", "L", "B"}, {{0, 1, 1}, {1, 2, 1}}, true, {false, true, false});
  CHECK_THROWS_AS(LatentSem(d, parented, {0, 1}), InvalidArgument);
}

TEST_CASE("e-step conjugate example") {
  Eigen::MatrixXd m(1, 1);
  m << 2.0;
  const Dag g({"L", "C"}, {{0, 1, 1.0}}, true, {true, false});
  LatentSem model(BatchDataset(m, {"C"}), g, {0.0, 1.0});
  Eigen::VectorXd theta(1);
  theta << 1.0;
  const auto post = model.e_step(theta, 1.0);
  CHECK(post.mean(0) == doctest::Approx(1.0));
  CHECK(post.variance == doctest::Approx(0.5));
  // A disconnected latent keeps the prior.
  theta << 0.0;
  const auto flat = model.e_step(theta, 1.0);
  CHECK(flat.mean(0) == doctest::Approx(0.0));
  CHECK(flat.variance == doctest::Approx(1.0));
  CHECK_THROWS_AS(model.e_step(theta, 0.0), InvalidArgument);
}

TEST_CASE("e-step matches quadrature on random rows") {
  const auto spec = triangle(0.8, 0.5, 0.6, 3.0);
  const auto d = simulate(spec, 20, 8);
  const GaussianPrior prior{2.5, 1.7};
  LatentSem model(d, spec.dag, prior);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd theta(static_cast<Eigen::Index>(model.edges().size()));
    for (auto& t : theta) t = z(rng);
    const double sigma2 = 0.5 + trial;
    const auto post = model.e_step(theta, sigma2);
    double worst = 0;
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      std::vector<double> resid, w;
      // A = wLA L + e, B = wLB L + wAB A + e
      double wla = 0, wlb = 0, wab = 0;
      for (std::size_t e = 0; e < model.edges().size(); ++e) {
        const auto& me = model.edges()[e];
        const double v = theta(static_cast<Eigen::Index>(e));
        if (me.from == 0 && me.to == 1) wla = v;
        if (me.from == 0 && me.to == 2) wlb = v;
        if (me.from == 1 && me.to == 2) wab = v;
      }
      const double a = d.data()(r, 0), b = d.data()(r, 1);
      resid = {a, b - wab * a};
      w = {wla, wlb};
      worst = std::max(worst, std::abs(post.mean(r) - oracle::posterior_mean(prior.mean, prior.variance, resid, w, sigma2)));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("marginal log-likelihood matches quadrature") {
  const auto spec = triangle(0.8, 0.5, 0.6);
  const auto d = simulate(spec, 15, 2);
  const GaussianPrior prior{0.3, 1.2};
  LatentSem model(d, spec.dag, prior);
  Eigen::VectorXd theta(3);
  theta << 0.7, -0.4, 0.9;
  double wla = 0, wlb = 0, wab = 0;
  for (std::size_t e = 0; e < model.edges().size(); ++e) {
    const auto& me = model.edges()[e];
    if (me.from == 0 && me.to == 1) wla = theta(static_cast<Eigen::Index>(e));
    if (me.from == 0 && me.to == 2) wlb = theta(static_cast<Eigen::Index>(e));
    if (me.from == 1 && me.to == 2) wab = theta(static_cast<Eigen::Index>(e));
  }
  const double sigma2 = 0.8;
  double sum = 0;
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    const double a = d.data()(r, 0), b = d.data()(r, 1);
    sum += quadrature_marginal(prior.mean, prior.variance, {a, b - wab * a}, {wla, wlb}, sigma2);
  }
  CHECK(model.penalized_marginal_loglik(theta, sigma2) == doctest::Approx(sum).epsilon(1e-9));
}

TEST_CASE("gradient matches central finite differences") {
  const auto spec = triangle(0.8, 0.5, 0.6, 1.0);
  const auto d = simulate(spec, 300, 6);
  LatentSem model(d, spec.dag, {1.0, 1.0});
  model.set_penalty({{"A", 0.4}, {"B", -0.3}}, 2.0);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd theta(3);
    for (auto& t : theta) t = z(rng);
    const double sigma2 = 0.7 + 0.3 * trial;
    // Posterior from a different point so the gradient is not trivially zero.
    Eigen::VectorXd other = theta.array() + 0.3;
    const auto post = model.e_step(other, sigma2);
    const Eigen::VectorXd g = model.expected_loglik_gradient(theta, sigma2, post) - model.penalty_subgradient(theta);
    Eigen::VectorXd fd(3);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < 3; ++i) {
      Eigen::VectorXd up = theta, down = theta;
      up(i) += h;
      down(i) -= h;
      fd(i) = (model.objective(up, sigma2, post) - model.objective(down, sigma2, post)) / (2 * h);
    }
    CAPTURE(trial);
    CHECK((g - fd).norm() / fd.norm() < 1e-4);
  }
}

TEST_CASE("lambda zero with a point-mass posterior recovers OLS with the latent observed") {
  const auto spec = triangle(0.8, 0.5, 0.6);
  const auto full = simulate(spec, 2000, 12, true);
  const auto obs = simulate(spec, 2000, 12);
  LatentSem model(obs, spec.dag, {0.0, 1.0});
  model.set_penalty({}, 0.0);
  LatentPosterior post;
  post.mean = full.data().col(0);
  post.variance = 1e-12;

  // Reference: per-node least squares with L as an ordinary column.
  const Eigen::VectorXd l = full.data().col(0), a = full.data().col(1), b = full.data().col(2);
  Eigen::MatrixXd xa(l.size(), 1);
  xa.col(0) = l;
  const Eigen::VectorXd beta_a = xa.colPivHouseholderQr().solve(a);
  Eigen::MatrixXd xb(l.size(), 2);
  xb.col(0) = l;
  xb.col(1) = a;
  const Eigen::VectorXd beta_b = xb.colPivHouseholderQr().solve(b);
  const double sigma2_ref = ((a - xa * beta_a).squaredNorm() + (b - xb * beta_b).squaredNorm()) / (2.0 * 2000);

  EmConfig cfg;
  cfg.eta = 1.0;
  cfg.max_m_steps = 20000;
  cfg.max_backtracks = 60;
  const auto r = model.m_step(Eigen::VectorXd::Zero(3), 1.0, post, cfg);
  const auto p = model.unpack(r.theta, r.sigma2);
  CHECK(std::abs(p.weights.at({"L", "A"}) - beta_a(0)) < 1e-3);
  CHECK(std::abs(p.weights.at({"L", "B"}) - beta_b(0)) < 1e-3);
  CHECK(std::abs(p.weights.at({"A", "B"}) - beta_b(1)) < 1e-3);
  CHECK(std::abs(r.sigma2 - sigma2_ref) < 1e-3);
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i) CHECK(r.objective_trace[i] >= r.objective_trace[i - 1]);
}

TEST_CASE("huge lambda pins latent weights to the correlation target") {
  const auto spec = triangle(0.8, 0.5, 0.6);
  const auto d = simulate(spec, 1000, 13);
  LatentSem model(d, spec.dag, {0.0, 2.0});
  model.set_penalty({{"A", 0.3}, {"B", -0.2}}, 1e6);
  // Independent target: rho * sample sd of the child / prior sd.
  auto sd = [](const Eigen::VectorXd& v) {
    return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
  };
  const double ta = 0.3 * sd(d.data().col(0)) / std::sqrt(2.0);
  const double tb = -0.2 * sd(d.data().col(1)) / std::sqrt(2.0);
  EmConfig cfg;
  cfg.eta = 1e-3;
  cfg.max_m_steps = 3000;
  cfg.max_backtracks = 80;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  const auto post = model.e_step(theta, 1.0);
  const auto r = model.m_step(theta, 1.0, post, cfg);
  const auto p = model.unpack(r.theta, r.sigma2);
  CHECK(std::abs(p.weights.at({"L", "A"}) - ta) < 1e-3);
  CHECK(std::abs(p.weights.at({"L", "B"}) - tb) < 1e-3);
}

TEST_CASE("penalty leaves children without a correlation unconstrained") {
  const auto spec = triangle(0.8, 0.5, 0.6);
  LatentSem model(simulate(spec, 50, 1), spec.dag, {0.0, 1.0});
  model.set_penalty({{"A", 0.5}}, 3.0);
  int with_target = 0;
  for (const auto& t : model.penalty_target()) with_target += t.has_value();
  CHECK(with_target == 1);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  for (std::size_t e = 0; e < model.edges().size(); ++e) {
    if (model.penalty_target()[e]) theta(static_cast<Eigen::Index>(e)) = *model.penalty_target()[e] + 2.0;
  }
  CHECK(model.penalty(theta) == doctest::Approx(6.0));
}

TEST_CASE("em is monotone on random instances") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> w(-1.2, 1.2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = triangle(w(rng), w(rng), w(rng), 1.0);
    const auto batches = split_batches(simulate(spec, 600, 100 + static_cast<std::uint64_t>(trial)), {300, 300},
                                       std::nullopt, 1);
    EmConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(trial);
    std::map<std::string, double> rho;
    if (trial % 2) rho = {{"A", 0.4}, {"B", -0.3}};
    const auto r = fit_em(batches, spec.dag, {1.0, 1.0}, rho, cfg);
    CAPTURE(trial);
    for (const auto& t : r.traces) {
      CHECK(t.monotone);
      for (std::size_t i = 1; i < t.marginal.size(); ++i) {
        CHECK(t.marginal[i] >= t.marginal[i - 1] - 1e-9 * (1 + std::abs(t.marginal[i - 1])));
      }
    }
  }
}

TEST_CASE("fit without a latent equals the warm start") {
  SemSpec s;
  s.dag = Dag({"A", "B", "C"}, {{0, 1, 0.7}, {1, 2, -0.4}}, true);
  const auto batches = split_batches(simulate(s, 900, 3), {300, 600}, std::nullopt, 2);
  const auto r = fit_em(batches, s.dag, {}, {}, {}, params_of(s.dag, 1.0));
  REQUIRE(r.per_batch.size() == 2);
  for (std::size_t b = 0; b < 2; ++b) {
    const auto ws = mle_warm_start(batches[b], s.dag);
    CHECK(r.per_batch[b].weights == ws.params.weights);
    CHECK(r.per_batch[b].sigma2 == ws.params.sigma2);
  }
  CHECK(r.error.size() == 2);
}

TEST_CASE("em on a wine-like sem with a good prior") {
  const auto spec = triangle(0.8, 0.5, 0.6, 11.0);
  std::vector<Eigen::Index> sizes(5, 5000);
  const auto batches = split_batches(simulate(spec, 25000, 31), sizes, std::nullopt, 7);
  const std::map<std::string, double> rho{{"A", implied_correlation(spec, "L", "A")},
                                          {"B", implied_correlation(spec, "L", "B")}};
  EmConfig cfg;
  const auto truth = params_of(spec.dag, 1.0);
  const auto good = fit_em(batches, spec.dag, {11.0, 1.0}, rho, cfg, truth);
  CHECK(good.error.back() < 0.3);
  const auto bad = fit_em(batches, spec.dag, {50.0, 1.5}, rho, cfg, truth);
  CHECK(bad.error[1] > good.error[1]);
  CHECK(bad.error.back() < bad.error.front());
}

TEST_CASE("fit_em argument checks") {
  const auto spec = triangle(0.8, 0.5, 0.6);
  const std::vector<BatchDataset> one{simulate(spec, 50, 1)};
  EmConfig cfg;
  cfg.eta = 0;
  CHECK_THROWS_AS(fit_em(one, spec.dag, {}, {}, cfg), InvalidArgument);
  cfg = {};
  cfg.lambda = -1;
  CHECK_THROWS_AS(fit_em(one, spec.dag, {}, {}, cfg), InvalidArgument);
  CHECK_THROWS_AS(fit_em({}, spec.dag, {}, {}, {}), InvalidArgument);
}
