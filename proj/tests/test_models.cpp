// Copyright 2026 The sharedforest Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "sharedforest/models.hpp"
#include "sharedforest/tree_prior.hpp"
#include "test_support.hpp"

using namespace sharedforest;
namespace ts = testing_support;

namespace {

// Root of trigamma(a) = target by plain bisection in log a.
double trigamma_root_bisection(double target) {
  double lo = std::log(1e-8), hi = std::log(1e15);
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (boost::math::trigamma(std::exp(mid)) > target) lo = mid;
    else hi = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

// Sum of T prior trees, each with N(0, leaf_sd^2) leaves, at two points.
struct PriorForestDraw {
  double hx = 0.0;
  double hy = 0.0;
  bool first_tree_shared = false;
};

PriorForestDraw draw_prior_forest(std::size_t trees, double leaf_sd, std::span<const double> x,
                                  std::span<const double> y, Rng& rng) {
  const TreePriorParams params{0.95, 2.0};
  const SplitProbabilities split(x.size(), 1.0);
  PriorForestDraw d;
  for (std::size_t t = 0; t < trees; ++t) {
    DecisionTree tree = sample_tree_from_prior(params, split, rng, 1);
    for (NodeId leaf : tree.leaves()) tree.leaf_values(leaf)[0] = rng.normal(0.0, leaf_sd);
    const NodeId a = tree.leaf_for(x);
    const NodeId b = tree.leaf_for(y);
    d.hx += tree.value(a, 0);
    d.hy += tree.value(b, 0);
    if (t == 0) d.first_tree_shared = a == b;
  }
  return d;
}

// A fit result holding one draw of single-leaf gamma-hurdle trees.
FitResult constant_fit(double theta0, double theta_leaf = 0.0) {
  FitResult fit;
  fit.spec.kind = ModelKind::GammaHurdle;
  fit.layout = SlotLayout::make(ModelKind::GammaHurdle, true);
  fit.observation = ObservationModel(ResponseScaling{ModelKind::GammaHurdle, 0.0, 1.0});
  ForestSnapshot s;
  s.trees.assign(3, DecisionTree(2));
  s.trees[0].leaf_values(0)[0] = theta_leaf;
  s.globals.theta0 = theta0;
  s.globals.lambda0 = 0.0;
  s.globals.alpha = 2.0;
  s.split_probs = SplitProbabilities(2, 1.0);
  PosteriorDraw d;
  d.forests.push_back(s);
  fit.draws.push_back(d);
  return fit;
}

}  // namespace

TEST(LogGammaHyperparams, ResidualsOnGrid) {
  for (double a : {0.01, 0.1, 0.5, 1.0, 1.5, 3.0, 10.0})
    for (double t : {1.0, 10.0, 50.0, 200.0, 1000.0}) {
      const LogGammaLeafPrior p = solve_loggamma_hyperparams(a, t);
      EXPECT_LT(std::abs(boost::math::digamma(p.shape) - std::log(p.rate)), 1e-10) << a << " " << t;
      EXPECT_LT(std::abs(boost::math::trigamma(p.shape) - a * a / t), 1e-10) << a << " " << t;
    }
}

TEST(LogGammaHyperparams, MatchesBisectionOracle) {
  const LogGammaLeafPrior p = solve_loggamma_hyperparams(0.5, 50.0);
  const double oracle = trigamma_root_bisection(0.25 / 50.0);
  EXPECT_NEAR(p.shape, oracle, 1e-9 * oracle);
  // Close to the T / a^2 = 200 approximation.
  EXPECT_NEAR(p.shape, 200.0, 1.0);
  for (double a : {0.2, 2.0, 7.0}) {
    const LogGammaLeafPrior q = solve_loggamma_hyperparams(a, 3.0);
    const double o = trigamma_root_bisection(a * a / 3.0);
    EXPECT_NEAR(q.shape, o, 1e-9 * o);
  }
}

TEST(LogGammaHyperparams, LargeTreeCountAsymptote) {
  const double a = 0.5;
  const LogGammaLeafPrior p = solve_loggamma_hyperparams(a, 1e4);
  EXPECT_NEAR(p.shape / 1e4, 1.0 / (a * a), 0.01 / (a * a));
}

TEST(LogGammaHyperparams, RejectsBadInput) {
  EXPECT_THROW(solve_loggamma_hyperparams(0.0, 50.0), ConfigError);
  EXPECT_THROW(solve_loggamma_hyperparams(0.5, 0.5), ConfigError);
}

TEST(DefaultPrior, LogNormalLeafScales) {
  PriorConfig cfg;
  cfg.num_trees = 50;
  cfg.k_mu = 1.5;
  const WorkingResponse r = preprocess_response(std::vector<double>{0.0, 1.0, 2.0, 4.0}, ModelKind::LogNormalHurdle);
  const ResolvedPrior p = default_prior_lognormal(r, cfg);
  EXPECT_DOUBLE_EQ(p.kappa, 50.0 / 2.25);
  const double var_mu = p.log_gamma.rate / ((p.log_gamma.shape - 1.0) * p.kappa);
  EXPECT_NEAR(var_mu, 2.25 / 50.0, 0.02 * 2.25 / 50.0);
  EXPECT_DOUBLE_EQ(p.sigma_theta, 3.0 / (2.0 * std::sqrt(50.0)));
  EXPECT_LT(std::abs(boost::math::trigamma(p.log_gamma.shape) - 0.25 / 50.0), 1e-10);
}

TEST(DefaultPrior, LeafVarianceHalvesWhenTreesDouble) {
  PriorConfig cfg;
  const WorkingResponse r = preprocess_response(std::vector<double>{1.0, 2.0, 4.0}, ModelKind::LogNormalHurdle);
  cfg.num_trees = 40;
  const ResolvedPrior a = default_prior_lognormal(r, cfg);
  cfg.num_trees = 80;
  const ResolvedPrior b = default_prior_lognormal(r, cfg);
  EXPECT_DOUBLE_EQ(b.kappa, 2.0 * a.kappa);
  EXPECT_NEAR(boost::math::trigamma(b.log_gamma.shape), 0.5 * boost::math::trigamma(a.log_gamma.shape), 1e-12);
  const ResolvedPrior ma = default_prior_mixed([] { PriorConfig c; c.num_trees = 40; return c; }());
  const ResolvedPrior mb = default_prior_mixed([] { PriorConfig c; c.num_trees = 80; return c; }());
  EXPECT_NEAR(mb.leaf_sd * mb.leaf_sd, 0.5 * ma.leaf_sd * ma.leaf_sd, 1e-15);
}

TEST(DefaultPrior, LogNormalNeedsPositiveResponses) {
  PriorConfig cfg;
  WorkingResponse r;
  r.num_positive = 0;
  EXPECT_THROW(default_prior_lognormal(r, cfg), DataError);
  EXPECT_THROW(preprocess_response(std::vector<double>{0.0, 0.0, 0.0}, ModelKind::LogNormalHurdle), DataError);
}

TEST(DefaultPrior, GammaEqualResponsesAreDegenerate) {
  PriorConfig cfg;
  try {
    default_prior_gamma(std::vector<double>{0.0, 2.0, 2.0, 2.0}, cfg);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), DataErrorCode::DegenerateResponse);
  }
  EXPECT_THROW(default_prior_gamma(std::vector<double>{0.0, 3.0}, cfg), DataError);
}

TEST(DefaultPrior, GammaLeafScaleFromLogSd) {
  Rng rng(404);
  std::vector<double> y(10000);
  for (double& v : y) v = rng.uniform() < 0.3 ? 0.0 : std::exp(rng.normal(0.7, 1.0));
  PriorConfig cfg;
  const ResolvedPrior p = default_prior_gamma(y, cfg);
  std::vector<double> logs;
  for (double v : y)
    if (v > 0.0) logs.push_back(std::log(v));
  EXPECT_NEAR(p.a_lambda, 1.5 * std::sqrt(ts::moments(logs).variance), 1e-12);
  EXPECT_NEAR(p.a_lambda, 1.5, 0.05);
  const LogGammaLeafPrior solved = solve_loggamma_hyperparams(p.a_lambda, 50.0);
  EXPECT_EQ(p.log_gamma.shape, solved.shape);

  cfg.a_lambda_gamma = 0.8;
  EXPECT_EQ(default_prior_gamma(y, cfg).a_lambda, 0.8);
}

TEST(DefaultPrior, GammaScaleInvariant) {
  Rng rng(405);
  std::vector<double> y(500);
  for (double& v : y) v = rng.uniform() < 0.2 ? 0.0 : rng.gamma(2.0, 0.5);
  PriorConfig cfg;
  const ResolvedPrior a = default_prior_gamma(y, cfg);
  const WorkingResponse wa = preprocess_response(y, ModelKind::GammaHurdle);
  for (double c : {1e-3, 7.0, 1e6}) {
    std::vector<double> scaled = y;
    for (double& v : scaled) v *= c;
    const ResolvedPrior b = default_prior_gamma(scaled, cfg);
    EXPECT_NEAR(b.a_lambda, a.a_lambda, 1e-12);
    EXPECT_NEAR(b.log_gamma.shape, a.log_gamma.shape, 1e-9 * a.log_gamma.shape);
    EXPECT_NEAR(b.log_gamma.rate, a.log_gamma.rate, 1e-9 * a.log_gamma.rate);
    const WorkingResponse wb = preprocess_response(scaled, ModelKind::GammaHurdle);
    EXPECT_NEAR(wb.scaling.scale, c * wa.scaling.scale, 1e-12 * c * wa.scaling.scale);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(wb.value[i], wa.value[i], 1e-12);
  }
}

TEST(ConditionalMoments, GammaByHand) {
  const MeanVariance mv = gamma_conditional_moments(0.0, 0.0, 4.0);
  EXPECT_DOUBLE_EQ(mv.mean, 1.0);
  EXPECT_DOUBLE_EQ(mv.variance, 0.25);
  // sd/mean = alpha^{-1/2} whatever the forest value.
  for (double h : {-3.0, -0.2, 0.0, 1.7})
    for (double alpha : {0.3, 4.0, 50.0}) {
      const MeanVariance m = gamma_conditional_moments(0.4, h, alpha);
      EXPECT_NEAR(std::sqrt(m.variance) / m.mean, 1.0 / std::sqrt(alpha), 1e-14);
      EXPECT_NEAR(m.mean, std::exp(-0.4 - h), 1e-14 * m.mean);
    }
}

TEST(ConditionalMoments, GammaMonteCarlo) {
  const double lambda0 = 0.3, h = -0.5, alpha = 4.0;
  const MeanVariance mv = gamma_conditional_moments(lambda0, h, alpha);
  Rng rng(2024);
  const std::size_t n = 1000000;
  std::vector<double> d(n), sq(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = rng.gamma(alpha, alpha * std::exp(lambda0 + h));
  const auto m = ts::moments(d);
  for (std::size_t i = 0; i < n; ++i) sq[i] = (d[i] - m.mean) * (d[i] - m.mean);
  const auto v = ts::moments(sq);
  EXPECT_NEAR(m.mean, mv.mean, 3.0 * m.se);
  EXPECT_NEAR(m.variance, mv.variance, 3.0 * v.se);
}

TEST(ConditionalMoments, LogNormalByHand) {
  const MeanVariance a = lognormal_conditional_moments(0.0, 0.0);
  EXPECT_NEAR(a.mean, std::exp(0.5), 1e-15);
  EXPECT_NEAR(a.variance, std::numbers::e * (std::numbers::e - 1.0), 1e-14);
  const MeanVariance b = lognormal_conditional_moments(0.0, -60.0);
  EXPECT_NEAR(b.mean, 1.0, 1e-15);
  EXPECT_LT(b.variance, 1e-25);
}

TEST(ConditionalMoments, LogNormalMonteCarlo) {
  const double mu = 0.2, s2 = 0.5;
  const MeanVariance mv = lognormal_conditional_moments(mu, std::log(s2));
  Rng rng(2025);
  const std::size_t n = 1000000;
  std::vector<double> d(n), sq(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = std::exp(rng.normal(mu, std::sqrt(s2)));
  const auto m = ts::moments(d);
  for (std::size_t i = 0; i < n; ++i) sq[i] = (d[i] - m.mean) * (d[i] - m.mean);
  const auto v = ts::moments(sq);
  EXPECT_NEAR(m.mean, mv.mean, 3.0 * m.se);
  EXPECT_NEAR(m.variance, mv.variance, 3.0 * v.se);
}

TEST(ObservationModel, LogNormalSummaryOnOriginalScale) {
  const ObservationModel obs(ResponseScaling{ModelKind::LogNormalHurdle, 1.0, 2.0});
  Globals g;
  g.theta0 = 0.4;
  g.lambda0 = 0.5;
  const FunctionValues f{0.1, 0.25, -0.3};
  const PointSummary s = obs.summarize(f, g);
  EXPECT_NEAR(s.pi, normal_cdf(0.5), 1e-15);
  EXPECT_NEAR(s.location, 1.5, 1e-15);
  // Working log-variance e^{-0.2}, scaled by 2^2.
  const double var = 4.0 * std::exp(-0.2);
  EXPECT_NEAR(s.log_scale_sd, std::sqrt(var), 1e-14);
  EXPECT_NEAR(s.mean, std::exp(1.5 + 0.5 * var), 1e-12);
  // The density integrates the cdf: finite-difference check.
  const double y = 3.0, dy = 1e-6;
  const double num = (obs.cdf(f, g, y + dy) - obs.cdf(f, g, y - dy)) / (2 * dy);
  EXPECT_NEAR(std::log(num), obs.log_regression(f, g, y), 1e-6);
  EXPECT_EQ(obs.log_regression(f, g, 0.0), 0.0);
}

TEST(ObservationModel, GammaDensityMatchesCdf) {
  const ObservationModel obs(ResponseScaling{ModelKind::GammaHurdle, 0.0, 3.0});
  Globals g;
  g.theta0 = 0.0;
  g.lambda0 = -0.2;
  g.alpha = 2.5;
  const FunctionValues f{0.0, 0.0, 0.4};
  const PointSummary s = obs.summarize(f, g);
  EXPECT_NEAR(s.mean, 3.0 * std::exp(-0.2), 1e-14);
  EXPECT_NEAR(s.sd / s.mean, 1.0 / std::sqrt(2.5), 1e-14);
  for (double y : {0.3, 2.0, 7.0}) {
    const double dy = 1e-6;
    const double num = (obs.cdf(f, g, y + dy) - obs.cdf(f, g, y - dy)) / (2 * dy);
    EXPECT_NEAR(std::log(num), obs.log_regression(f, g, y), 1e-6);
  }
}

TEST(Predict, ZeroForestGivesInterceptProbability) {
  const FitResult fit = constant_fit(0.7);
  std::size_t clamped = 99;
  const auto pred = predict(fit, std::vector<double>{0.2, 0.4, 1.5, -0.1}, 2, &clamped);
  ASSERT_EQ(pred.size(), 2u);
  EXPECT_EQ(clamped, 2u);
  for (const auto& p : pred) {
    EXPECT_DOUBLE_EQ(p.pi.mean, normal_cdf(0.7));
    EXPECT_DOUBLE_EQ(p.pi.lower, p.pi.upper);
    EXPECT_DOUBLE_EQ(p.mean.mean, 1.0);
  }
  EXPECT_THROW(predict(fit, std::vector<double>{0.1, 0.2, 0.3}, 2), DataError);
}

TEST(Predict, ProbabilityMonotoneInIntercept) {
  double last = 0.0;
  for (double t0 = -3.0; t0 <= 3.0; t0 += 0.5) {
    const double pi = predict(constant_fit(t0, 0.2), std::vector<double>{0.5, 0.5}, 2)[0].pi.mean;
    EXPECT_GT(pi, last);
    EXPECT_DOUBLE_EQ(pi, normal_cdf(t0 + 0.2));
    last = pi;
  }
}

TEST(PriorForest, GaussianProcessCovariance) {
  const double sigma_mu = 1.5;
  const std::size_t trees = 50;
  const std::vector<double> x{0.3, 0.6}, y{0.36, 0.52};
  Rng rng(77);
  const std::size_t draws = 10000;
  std::vector<double> prod(draws), shared(draws);
  for (std::size_t k = 0; k < draws; ++k) {
    const auto d = draw_prior_forest(trees, sigma_mu / std::sqrt(double(trees)), x, y, rng);
    prod[k] = d.hx * d.hy;
    shared[k] = d.first_tree_shared ? 1.0 : 0.0;
  }
  const auto c = ts::moments(prod);
  const auto f = ts::moments(shared);
  const double se = std::hypot(c.se, sigma_mu * sigma_mu * f.se);
  EXPECT_NEAR(c.mean, sigma_mu * sigma_mu * f.mean, 3.0 * se) << "shared frequency " << f.mean;
  EXPECT_GT(f.mean, 0.2);
  EXPECT_LT(f.mean, 0.95);
}

TEST(PriorForest, VarianceStableInTreeCount) {
  const double sigma_mu = 1.5;
  const std::vector<double> x{0.42, 0.17};
  for (std::size_t trees : {10u, 50u, 200u}) {
    Rng rng(1000 + trees);
    std::vector<double> sq(10000);
    for (double& v : sq) {
      const auto d = draw_prior_forest(trees, sigma_mu / std::sqrt(double(trees)), x, x, rng);
      v = d.hx * d.hx;
    }
    const auto m = ts::moments(sq);
    EXPECT_NEAR(m.mean, sigma_mu * sigma_mu, 3.0 * m.se) << "T=" << trees;
  }
}

TEST(LogNormalModel, HomoskedasticShrinkage) {
  Rng rng(31);
  const std::size_t n = 200, p = 2;
  std::vector<double> x(n * p), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i * p] = rng.uniform();
    x[i * p + 1] = rng.uniform();
    const double sd = x[i * p] < 0.5 ? 0.2 : 1.5;
    y[i] = rng.uniform() < 0.2 ? 0.0 : std::exp(rng.normal(x[i * p + 1], sd));
  }
  ModelSpec spec;
  spec.kind = ModelKind::LogNormalHurdle;
  spec.prior.num_trees = 20;
  spec.prior.a_lambda = 1e-4;
  ChainSettings chain;
  chain.iterations = 300;
  chain.burnin = 100;
  chain.thin = 2;
  const FitResult fit = fit_model(x, p, y, {}, spec, chain, 5, false);
  ASSERT_EQ(fit.draws.size(), 100u);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int a = 0; a < 20; ++a)
    for (int b = 0; b < 20; ++b) {
      const std::vector<double> pt{(a + 0.5) / 20.0, (b + 0.5) / 20.0};
      double mean = 0.0;
      for (const auto& d : fit.draws) {
        const Globals g = d.globals();
        mean += -g.lambda0 - evaluate_draw(d, fit.layout, pt).lambda;
      }
      mean /= static_cast<double>(fit.draws.size());
      lo = std::min(lo, mean);
      hi = std::max(hi, mean);
    }
  EXPECT_LT(hi - lo, 1e-3);
}

TEST(FitModel, DeterministicAndPoolsChains) {
  Rng rng(8);
  const std::size_t n = 40, p = 3;
  std::vector<double> x(n * p), y(n);
  for (double& v : x) v = rng.uniform();
  for (double& v : y) v = rng.uniform() < 0.3 ? 0.0 : rng.gamma(2.0, 1.0);
  ModelSpec spec;
  spec.kind = ModelKind::GammaHurdle;
  spec.prior.num_trees = 5;
  ChainSettings chain;
  chain.iterations = 30;
  chain.burnin = 10;
  chain.thin = 3;
  chain.chains = 2;
  const FitResult a = fit_model(x, p, y, {}, spec, chain, 99);
  const FitResult b = fit_model(x, p, y, {}, spec, chain, 99);
  ASSERT_EQ(a.draws.size(), 2 * chain.retained_per_chain());
  EXPECT_EQ(chain.retained_per_chain(), 7u);
  for (std::size_t k = 0; k < a.draws.size(); ++k) {
    EXPECT_EQ(a.draws[k].iteration, b.draws[k].iteration);
    EXPECT_EQ(a.draws[k].forests[0].trees, b.draws[k].forests[0].trees);
    EXPECT_EQ(a.draws[k].globals().alpha, b.draws[k].globals().alpha);
  }
  EXPECT_EQ(a.log_regression, b.log_regression);
  EXPECT_EQ(a.draws.front().iteration, 11u);

  // Unshared layout keeps two forests per draw.
  spec.shared = false;
  chain.chains = 1;
  const FitResult c = fit_model(x, p, y, {}, spec, chain, 99);
  EXPECT_EQ(c.draws.front().forests.size(), 2u);
  EXPECT_EQ(c.layout.lambda.forest, 1);
  EXPECT_EQ(c.layout.lambda.slot, 0);
}

TEST(FitModel, RejectsBadSettings) {
  ChainSettings chain;
  chain.iterations = 10;
  chain.burnin = 10;
  EXPECT_THROW(chain.check(), ConfigError);
  PriorConfig cfg;
  cfg.num_trees = 0;
  EXPECT_THROW(cfg.check(), ConfigError);
  cfg.num_trees = 5;
  cfg.k_mu = -1.0;
  EXPECT_THROW(cfg.check(), ConfigError);
}
