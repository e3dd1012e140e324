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

#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "sharedforest/error.hpp"
#include "sharedforest/leaf_marginals.hpp"
#include "sharedforest/math.hpp"
#include "sharedforest/rng.hpp"
#include "sharedforest/slice_sampler.hpp"
#include "sharedforest/tree.hpp"

namespace sharedforest {

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

/// Scalar parameters outside the trees. Entries a model does not use stay NaN.
struct Globals {
  double theta0 = kNotApplicable;   // probit intercept
  double sigma = kNotApplicable;    // Gaussian noise sd (working scale)
  double lambda0 = kNotApplicable;  // log-precision / log-rate baseline
  double alpha = kNotApplicable;    // gamma shape
  double xi = kNotApplicable;       // Dirichlet concentration of the split prior
  double leaf_scale = kNotApplicable;  // a_lambda when it is sampled
};

/// Per-slot partial or full fits, indexed [slot][observation].
using FitTable = std::span<const std::vector<double>>;

/// One model component of a shared forest: a leaf family, the observations it
/// sees, and its global parameters. Components own their backfit cache.
class LeafComponent {
 public:
  virtual ~LeafComponent() = default;

  virtual std::string_view family() const = 0;
  virtual std::size_t num_slots() const = 0;
  virtual std::size_t num_observations() const = 0;

  /// Rebuild the backfit cache from the fits of all trees but the current one.
  virtual void prepare(FitTable partial) = 0;
  virtual double leaf_log_marginal(std::span<const std::size_t> obs) const = 0;
  virtual void draw_leaf(std::span<const std::size_t> obs, Rng& rng, std::span<double> out) const = 0;

  virtual void update_globals(FitTable fits, Rng& rng) = 0;
  virtual void update_latent(FitTable /*fits*/, Rng& /*rng*/) {}
  /// Hyperparameters of the leaf prior that depend on all leaves.
  virtual void update_leaf_prior(std::span<const DecisionTree> /*forest*/, std::size_t /*first_slot*/,
                                 Rng& /*rng*/) {}

  virtual void export_globals(Globals& g) const = 0;
  virtual void import_globals(const Globals& g) = 0;

  /// Fixed per-slot offset added to every fit (the probit intercept).
  virtual double offset(std::size_t /*slot*/) const { return 0.0; }
};

/// Binary outcome through a latent unit-variance Gaussian.
class ProbitComponent final : public LeafComponent {
 public:
  struct Params {
    double sigma_theta = 1.0;
    double theta0_prior_sd = 10.0;
  };

  ProbitComponent(std::vector<char> positive, Params params) : positive_(std::move(positive)), params_(params) {
    const std::size_t n = positive_.size();
    latent_.assign(n, 0.0);
    residual_.assign(n, 0.0);
    std::size_t k = 0;
    for (char p : positive_) k += p ? 1 : 0;
    if (n > 0) {
      const double frac = (static_cast<double>(k) + 0.5) / (static_cast<double>(n) + 1.0);
      theta0_ = normal_quantile(frac);
    }
    for (std::size_t i = 0; i < n; ++i) latent_[i] = positive_[i] ? 0.5 : -0.5;
  }

  std::string_view family() const override { return "probit"; }
  std::size_t num_slots() const override { return 1; }
  std::size_t num_observations() const override { return positive_.size(); }

  void prepare(FitTable partial) override {
    const auto& h = partial[0];
    for (std::size_t i = 0; i < latent_.size(); ++i) residual_[i] = latent_[i] - theta0_ - h[i];
  }

  double leaf_log_marginal(std::span<const std::size_t> obs) const override {
    return probit_log_marginal(stats(obs), params_.sigma_theta);
  }

  void draw_leaf(std::span<const std::size_t> obs, Rng& rng, std::span<double> out) const override {
    out[0] = draw_theta_leaf(stats(obs), params_.sigma_theta, rng);
  }

  void update_globals(FitTable fits, Rng& rng) override {
    const auto& h = fits[0];
    const double prior_precision = 1.0 / (params_.theta0_prior_sd * params_.theta0_prior_sd);
    double sum = 0.0;
    for (std::size_t i = 0; i < latent_.size(); ++i) sum += latent_[i] - h[i];
    const double precision = prior_precision + static_cast<double>(latent_.size());
    theta0_ = rng.normal(sum / precision, 1.0 / std::sqrt(precision));
  }

  void update_latent(FitTable fits, Rng& rng) override {
    const auto& h = fits[0];
    for (std::size_t i = 0; i < latent_.size(); ++i)
      latent_[i] = draw_truncated_unit_normal(theta0_ + h[i], positive_[i] != 0, rng);
  }

  void export_globals(Globals& g) const override { g.theta0 = theta0_; }
  void import_globals(const Globals& g) override { theta0_ = g.theta0; }

  double theta0() const { return theta0_; }
  std::span<const double> latent() const { return latent_; }
  std::span<const char> outcome() const { return positive_; }
  const Params& params() const { return params_; }

  void set_data(std::vector<char> positive, std::vector<double> latent) {
    positive_ = std::move(positive);
    latent_ = std::move(latent);
    residual_.assign(positive_.size(), 0.0);
  }

 private:
  NormalStats stats(std::span<const std::size_t> obs) const {
    NormalStats s;
    for (std::size_t i : obs) s.add(residual_[i]);
    return s;
  }

  std::vector<char> positive_;
  Params params_;
  std::vector<double> latent_;
  std::vector<double> residual_;
  double theta0_ = 0.0;
};

/// Gaussian response with a common noise sd.
class GaussianComponent final : public LeafComponent {
 public:
  struct Params {
    double leaf_sd = 1.0;
    double sigma_scale = 1.0;  // half-Cauchy scale on sigma
    double fixed_sigma = 0.0;  // > 0 disables the sigma update
  };

  GaussianComponent(std::vector<double> y, Params params) : y_(std::move(y)), params_(params) {
    residual_.assign(y_.size(), 0.0);
    sigma_ = params_.fixed_sigma > 0.0 ? params_.fixed_sigma : params_.sigma_scale;
  }

  std::string_view family() const override { return "gaussian"; }
  std::size_t num_slots() const override { return 1; }
  std::size_t num_observations() const override { return y_.size(); }

  void prepare(FitTable partial) override {
    const auto& h = partial[0];
    for (std::size_t i = 0; i < y_.size(); ++i) residual_[i] = y_[i] - h[i];
  }

  double leaf_log_marginal(std::span<const std::size_t> obs) const override {
    return gaussian_log_marginal(stats(obs), GaussianLeafPrior{params_.leaf_sd});
  }

  void draw_leaf(std::span<const std::size_t> obs, Rng& rng, std::span<double> out) const override {
    out[0] = draw_gaussian_leaf(stats(obs), GaussianLeafPrior{params_.leaf_sd}, rng);
  }

  void update_globals(FitTable fits, Rng& rng) override {
    if (params_.fixed_sigma > 0.0) return;
    const auto& h = fits[0];
    double ss = 0.0;
    for (std::size_t i = 0; i < y_.size(); ++i) ss += (y_[i] - h[i]) * (y_[i] - h[i]);
    const double n = static_cast<double>(y_.size());
    const double scale = params_.sigma_scale;
    auto log_target = [&](double u) {
      return half_cauchy_log_pdf(std::exp(u), scale) + u - n * u - 0.5 * ss * std::exp(-2.0 * u);
    };
    sigma_ = std::exp(slice_sample(std::log(sigma_), log_target, rng));
  }

  void export_globals(Globals& g) const override { g.sigma = sigma_; }
  void import_globals(const Globals& g) override { sigma_ = g.sigma; }

  double sigma() const { return sigma_; }
  std::span<const double> response() const { return y_; }
  void set_response(std::vector<double> y) {
    y_ = std::move(y);
    residual_.assign(y_.size(), 0.0);
  }

 private:
  NormalStats stats(std::span<const std::size_t> obs) const {
    NormalStats s;
    const double nu = 1.0 / (sigma_ * sigma_);
    for (std::size_t i : obs) s.add(residual_[i], nu);
    return s;
  }

  std::vector<double> y_;
  Params params_;
  std::vector<double> residual_;
  double sigma_ = 1.0;
};

/// Solves trigamma(shape) = a^2 / T and rate = exp(digamma(shape)), so that a
/// log-gamma leaf has mean 0 and variance a^2 / T.
inline LogGammaLeafPrior solve_loggamma_hyperparams(double leaf_scale, double num_trees) {
  if (!(leaf_scale > 0.0) || !(num_trees >= 1.0))
    throw ConfigError("solve_loggamma_hyperparams: need a_lambda > 0 and T >= 1");
  const double target = leaf_scale * leaf_scale / num_trees;
  // trigamma is convex and decreasing, and trigamma(x) > 1/x, so Newton from
  // x = 1/target approaches the root monotonically from the left.
  double x = 1.0 / target;
  for (int iter = 0; iter < 100; ++iter) {
    const double f = trigamma(x) - target;
    const double step = f / boost::math::polygamma(2, x);
    double next = x - step;
    if (!(next > 0.0)) next = 0.5 * x;
    if (std::abs(next - x) <= 1e-15 * x) {
      x = next;
      return {x, std::exp(digamma(x))};
    }
    x = next;
  }
  if (std::abs(trigamma(x) - target) < 1e-12 * target) return {x, std::exp(digamma(x))};
  throw NumericError("solve_loggamma_hyperparams: Newton iteration did not converge");
}

/// Optional half-Cauchy(0, 1) hyperprior on the leaf scale a_lambda, updated by
/// slice sampling on log a given the current log-precision leaves.
struct LeafScaleHyperprior {
  bool enabled = false;
  double scale = 1.0;
};

namespace detail {

inline double loggamma_leaves_log_density(std::span<const DecisionTree> forest, std::size_t slot,
                                          const LogGammaLeafPrior& prior) {
  double lp = 0.0;
  const double norm = prior.shape * std::log(prior.rate) - std::lgamma(prior.shape);
  for (const DecisionTree& tree : forest)
    for (NodeId id : tree.leaves()) {
      const double lambda = tree.value(id, slot);
      lp += norm + prior.shape * lambda - prior.rate * std::exp(lambda);
    }
  return lp;
}

inline double sample_leaf_scale(double current, std::span<const DecisionTree> forest, std::size_t slot,
                                double hyper_scale, Rng& rng) {
  const auto num_trees = static_cast<double>(forest.size());
  auto log_target = [&](double u) {
    const double a = std::exp(u);
    if (!(a > 1e-6 && a < 1e3)) return kNegInf;
    const LogGammaLeafPrior prior = solve_loggamma_hyperparams(a, num_trees);
    return half_cauchy_log_pdf(a, hyper_scale) + u + loggamma_leaves_log_density(forest, slot, prior);
  };
  return std::exp(slice_sample(std::log(current), log_target, rng, 0.5));
}

}  // namespace detail

/// Positive responses y_i ~ Gamma(alpha, alpha exp(lambda0 + h(x_i))), mean
/// exp(-lambda0 - h(x_i)); rows with mask 0 are ignored.
class LogGammaComponent final : public LeafComponent {
 public:
  struct Params {
    LogGammaLeafPrior leaf;
    double alpha_scale = 1.0;  // alpha^{-1/2} ~ half-Cauchy(0, alpha_scale)
    double lambda0_shape = 1.0;  // exp(lambda0) ~ Gamma(shape, rate)
    double lambda0_rate = 1.0;
    double fixed_alpha = 0.0;  // > 0 disables the shape update
    LeafScaleHyperprior leaf_scale_prior;
    double leaf_scale = 1.0;
    double num_trees = 1.0;
  };

  LogGammaComponent(std::vector<double> y, std::vector<char> mask, Params params)
      : y_(std::move(y)), mask_(std::move(mask)), params_(params) {
    check();
    eta_.assign(y_.size(), 0.0);
    alpha_ = params_.fixed_alpha > 0.0 ? params_.fixed_alpha : 1.0 / (params_.alpha_scale * params_.alpha_scale);
    lambda0_ = 0.0;
    leaf_scale_ = params_.leaf_scale;
  }

  std::string_view family() const override { return "log-gamma"; }
  std::size_t num_slots() const override { return 1; }
  std::size_t num_observations() const override { return y_.size(); }

  void prepare(FitTable partial) override {
    const auto& h = partial[0];
    for (std::size_t i = 0; i < y_.size(); ++i)
      if (mask_[i]) eta_[i] = alpha_ * std::exp(lambda0_ + h[i]);
  }

  double leaf_log_marginal(std::span<const std::size_t> obs) const override {
    return gamma_log_marginal(stats(obs), params_.leaf, alpha_);
  }

  void draw_leaf(std::span<const std::size_t> obs, Rng& rng, std::span<double> out) const override {
    out[0] = draw_lambda_leaf(stats(obs), params_.leaf, alpha_, rng);
  }

  void update_globals(FitTable fits, Rng& rng) override {
    const auto& h = fits[0];
    double n = 0.0;
    double sum_y_eh = 0.0;
    for (std::size_t i = 0; i < y_.size(); ++i) {
      if (!mask_[i]) continue;
      n += 1.0;
      sum_y_eh += y_[i] * std::exp(h[i]);
    }
    lambda0_ = rng.log_gamma(params_.lambda0_shape + n * alpha_) -
               std::log(params_.lambda0_rate + alpha_ * sum_y_eh);

    if (params_.fixed_alpha > 0.0) return;
    double sum_lambda = 0.0;
    double sum_log_y = 0.0;
    double sum_y_el = 0.0;
    for (std::size_t i = 0; i < y_.size(); ++i) {
      if (!mask_[i]) continue;
      const double lambda = lambda0_ + h[i];
      sum_lambda += lambda;
      sum_log_y += std::log(y_[i]);
      sum_y_el += y_[i] * std::exp(lambda);
    }
    const double scale = params_.alpha_scale;
    auto log_target = [&](double v) {
      const double a = std::exp(v);
      if (!(a > 0.0) || !std::isfinite(a)) return kNegInf;
      const double log_prior = half_cauchy_log_pdf(std::exp(-0.5 * v), scale) - std::log(2.0) - 0.5 * v;
      const double log_lik = n * (a * v - std::lgamma(a)) + a * sum_lambda + (a - 1.0) * sum_log_y - a * sum_y_el;
      return log_prior + log_lik;
    };
    alpha_ = std::exp(slice_sample(std::log(alpha_), log_target, rng));
  }

  void update_leaf_prior(std::span<const DecisionTree> forest, std::size_t first_slot, Rng& rng) override {
    if (!params_.leaf_scale_prior.enabled) return;
    leaf_scale_ = detail::sample_leaf_scale(leaf_scale_, forest, first_slot, params_.leaf_scale_prior.scale, rng);
    params_.leaf = solve_loggamma_hyperparams(leaf_scale_, static_cast<double>(forest.size()));
  }

  void export_globals(Globals& g) const override {
    g.lambda0 = lambda0_;
    g.alpha = alpha_;
    if (params_.leaf_scale_prior.enabled) g.leaf_scale = leaf_scale_;
  }
  void import_globals(const Globals& g) override {
    lambda0_ = g.lambda0;
    alpha_ = g.alpha;
    if (params_.leaf_scale_prior.enabled && std::isfinite(g.leaf_scale)) {
      leaf_scale_ = g.leaf_scale;
      params_.leaf = solve_loggamma_hyperparams(leaf_scale_, params_.num_trees);
    }
  }

  double alpha() const { return alpha_; }
  double lambda0() const { return lambda0_; }
  const Params& params() const { return params_; }
  void set_response(std::vector<double> y, std::vector<char> mask) {
    y_ = std::move(y);
    mask_ = std::move(mask);
    eta_.assign(y_.size(), 0.0);
    check();
  }

 private:
  void check() const {
    if (mask_.size() != y_.size()) throw ConfigError("log-gamma component: mask and response sizes differ");
    for (std::size_t i = 0; i < y_.size(); ++i)
      if (mask_[i] && !(y_[i] > 0.0)) throw DataError(DataErrorCode::NegativeResponse,
                                                      "log-gamma component: responses must be positive");
  }

  GammaLeafStats stats(std::span<const std::size_t> obs) const {
    GammaLeafStats s;
    for (std::size_t i : obs)
      if (mask_[i]) s.add(y_[i], eta_[i]);
    return s;
  }

  std::vector<double> y_;
  std::vector<char> mask_;
  Params params_;
  std::vector<double> eta_;
  double alpha_ = 1.0;
  double lambda0_ = 0.0;
  double leaf_scale_ = 1.0;
};

/// Gaussian response with a tree-modelled mean and log-precision:
/// w_i ~ N(mu(x_i), 1 / exp(lambda0 + h(x_i))). Slots are (mu, lambda).
class NormalGammaComponent final : public LeafComponent {
 public:
  struct Params {
    NormalGammaLeafPrior leaf;
    double sigma0_scale = 1.0;  // sigma0 = exp(-lambda0/2) ~ half-Cauchy(0, scale)
    LeafScaleHyperprior leaf_scale_prior;
    double leaf_scale = 0.5;
    double num_trees = 1.0;
  };

  NormalGammaComponent(std::vector<double> w, std::vector<char> mask, Params params)
      : w_(std::move(w)), mask_(std::move(mask)), params_(params) {
    if (mask_.size() != w_.size()) throw ConfigError("normal-gamma component: mask and response sizes differ");
    q_.assign(w_.size(), 0.0);
    nu_.assign(w_.size(), 0.0);
    lambda0_ = -2.0 * std::log(params_.sigma0_scale);
    leaf_scale_ = params_.leaf_scale;
  }

  std::string_view family() const override { return "normal-gamma"; }
  std::size_t num_slots() const override { return 2; }
  std::size_t num_observations() const override { return w_.size(); }

  void prepare(FitTable partial) override {
    const auto& mu = partial[0];
    const auto& lambda = partial[1];
    for (std::size_t i = 0; i < w_.size(); ++i) {
      if (!mask_[i]) continue;
      q_[i] = w_[i] - mu[i];
      nu_[i] = std::exp(lambda0_ + lambda[i]);
    }
  }

  double leaf_log_marginal(std::span<const std::size_t> obs) const override {
    return normal_gamma_log_marginal(stats(obs), params_.leaf);
  }

  void draw_leaf(std::span<const std::size_t> obs, Rng& rng, std::span<double> out) const override {
    const MeanLogPrecision d = draw_mu_tau_leaf(stats(obs), params_.leaf, rng);
    out[0] = d.mean;
    out[1] = d.log_precision;
  }

  void update_globals(FitTable fits, Rng& rng) override {
    const auto& mu = fits[0];
    const auto& lambda = fits[1];
    double n = 0.0;
    double weighted_ss = 0.0;
    for (std::size_t i = 0; i < w_.size(); ++i) {
      if (!mask_[i]) continue;
      n += 1.0;
      const double r = w_[i] - mu[i];
      weighted_ss += std::exp(lambda[i]) * r * r;
    }
    const double scale = params_.sigma0_scale;
    auto log_target = [&](double u) {
      return half_cauchy_log_pdf(std::exp(u), scale) + u - n * u - 0.5 * weighted_ss * std::exp(-2.0 * u);
    };
    const double log_sigma0 = slice_sample(-0.5 * lambda0_, log_target, rng);
    lambda0_ = -2.0 * log_sigma0;
  }

  void update_leaf_prior(std::span<const DecisionTree> forest, std::size_t first_slot, Rng& rng) override {
    if (!params_.leaf_scale_prior.enabled) return;
    leaf_scale_ =
        detail::sample_leaf_scale(leaf_scale_, forest, first_slot + 1, params_.leaf_scale_prior.scale, rng);
    const LogGammaLeafPrior p = solve_loggamma_hyperparams(leaf_scale_, static_cast<double>(forest.size()));
    params_.leaf.shape = p.shape;
    params_.leaf.rate = p.rate;
  }

  void export_globals(Globals& g) const override {
    g.lambda0 = lambda0_;
    g.sigma = std::exp(-0.5 * lambda0_);
    if (params_.leaf_scale_prior.enabled) g.leaf_scale = leaf_scale_;
  }
  void import_globals(const Globals& g) override {
    lambda0_ = g.lambda0;
    if (params_.leaf_scale_prior.enabled && std::isfinite(g.leaf_scale)) {
      leaf_scale_ = g.leaf_scale;
      const LogGammaLeafPrior p = solve_loggamma_hyperparams(leaf_scale_, params_.num_trees);
      params_.leaf.shape = p.shape;
      params_.leaf.rate = p.rate;
    }
  }

  double lambda0() const { return lambda0_; }
  const Params& params() const { return params_; }

 private:
  NormalStats stats(std::span<const std::size_t> obs) const {
    NormalStats s;
    for (std::size_t i : obs)
      if (mask_[i]) s.add(q_[i], nu_[i]);
    return s;
  }

  std::vector<double> w_;
  std::vector<char> mask_;
  Params params_;
  std::vector<double> q_;
  std::vector<double> nu_;
  double lambda0_ = 0.0;
  double leaf_scale_ = 0.5;
};

}  // namespace sharedforest
