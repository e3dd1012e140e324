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
#include <cstddef>

#include "sharedforest/error.hpp"
#include "sharedforest/math.hpp"
#include "sharedforest/rng.hpp"

namespace sharedforest {

struct GaussianLeafPrior {
  double sd = 1.0;
};

/// lambda = log tau with tau ~ Gamma(shape, rate).
struct LogGammaLeafPrior {
  double shape = 1.0;
  double rate = 1.0;
};

/// tau ~ Gamma(shape, rate), mu | tau ~ N(0, 1 / (kappa tau)).
struct NormalGammaLeafPrior {
  double shape = 1.0;
  double rate = 1.0;
  double kappa = 1.0;
};

/// Weighted Gaussian sufficient statistics for a leaf: responses q_i with
/// precision weights nu_i. Accumulated with a weighted Welford recursion.
struct NormalStats {
  std::size_t count = 0;
  double weight = 0.0;          // sum nu_i
  double mean = 0.0;            // sum nu_i q_i / weight
  double sum_squares = 0.0;     // sum nu_i (q_i - mean)^2
  double sum_log_weight = 0.0;  // sum log nu_i

  void add(double q, double nu = 1.0) {
    ++count;
    weight += nu;
    const double delta = q - mean;
    mean += nu * delta / weight;
    sum_squares += nu * delta * (q - mean);
    sum_log_weight += std::log(nu);
  }

  void merge(const NormalStats& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double w = weight + other.weight;
    const double delta = other.mean - mean;
    sum_squares += other.sum_squares + delta * delta * weight * other.weight / w;
    mean += delta * other.weight / w;
    weight = w;
    count += other.count;
    sum_log_weight += other.sum_log_weight;
  }

  double weighted_sum() const { return weight * mean; }
};

/// Leaf statistics for the gamma likelihood: y_i ~ Gamma(shape, eta_i e^lambda)
/// with eta_i the backfitted rate factor.
struct GammaLeafStats {
  std::size_t count = 0;
  double sum_y_eta = 0.0;
  double sum_log_eta = 0.0;
  double sum_log_y = 0.0;

  void add(double y, double eta) {
    ++count;
    sum_y_eta += y * eta;
    sum_log_eta += std::log(eta);
    sum_log_y += std::log(y);
  }

  void merge(const GammaLeafStats& other) {
    count += other.count;
    sum_y_eta += other.sum_y_eta;
    sum_log_eta += other.sum_log_eta;
    sum_log_y += other.sum_log_y;
  }
};

/// log of the integral of prod N(q_i | m, 1/nu_i) against m ~ N(0, sd^2).
inline double gaussian_log_marginal(const NormalStats& s, const GaussianLeafPrior& prior) {
  if (s.count == 0) return 0.0;
  const double v = prior.sd * prior.sd;
  const double shrink = 1.0 + s.weight * v;
  return 0.5 * s.sum_log_weight - 0.5 * static_cast<double>(s.count) * kLogTwoPi - 0.5 * s.sum_squares -
         0.5 * std::log(shrink) - 0.5 * s.weight * s.mean * s.mean / shrink;
}

/// Latent-probit leaf marginal: unit-variance Gaussian residuals.
inline double probit_log_marginal(const NormalStats& s, double sigma_theta) {
  return gaussian_log_marginal(s, GaussianLeafPrior{sigma_theta});
}

inline double draw_gaussian_leaf(const NormalStats& s, const GaussianLeafPrior& prior, Rng& rng) {
  const double v = prior.sd * prior.sd;
  const double precision = 1.0 / v + s.weight;
  return rng.normal(s.weighted_sum() / precision, 1.0 / std::sqrt(precision));
}

inline double draw_theta_leaf(const NormalStats& s, double sigma_theta, Rng& rng) {
  return draw_gaussian_leaf(s, GaussianLeafPrior{sigma_theta}, rng);
}

inline double gamma_log_marginal(const GammaLeafStats& s, const LogGammaLeafPrior& prior, double shape) {
  if (s.count == 0) return 0.0;
  const double n = static_cast<double>(s.count);
  const double post_shape = prior.shape + n * shape;
  return shape * s.sum_log_eta + (shape - 1.0) * s.sum_log_y - n * std::lgamma(shape) +
         prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) + std::lgamma(post_shape) -
         post_shape * std::log(prior.rate + s.sum_y_eta);
}

/// lambda ~ logGamma(shape_prior + shape N, rate_prior + sum y eta).
inline double draw_lambda_leaf(const GammaLeafStats& s, const LogGammaLeafPrior& prior, double shape, Rng& rng) {
  const double post_shape = prior.shape + shape * static_cast<double>(s.count);
  const double post_rate = prior.rate + s.sum_y_eta;
  return rng.log_gamma(post_shape) - std::log(post_rate);
}

struct NormalGammaPosterior {
  double shape;
  double rate;
  double kappa;
  double mean;
};

inline NormalGammaPosterior normal_gamma_posterior(const NormalStats& s, const NormalGammaLeafPrior& prior) {
  const double kappa_hat = prior.kappa + s.weight;
  return {prior.shape + 0.5 * static_cast<double>(s.count),
          prior.rate + 0.5 * s.sum_squares + 0.5 * prior.kappa * s.weight * s.mean * s.mean / kappa_hat, kappa_hat,
          s.weighted_sum() / kappa_hat};
}

inline double normal_gamma_log_marginal(const NormalStats& s, const NormalGammaLeafPrior& prior) {
  if (s.count == 0) return 0.0;
  const NormalGammaPosterior post = normal_gamma_posterior(s, prior);
  return 0.5 * s.sum_log_weight - 0.5 * static_cast<double>(s.count) * kLogTwoPi +
         0.5 * std::log(prior.kappa / post.kappa) + prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) +
         std::lgamma(post.shape) - post.shape * std::log(post.rate);
}

struct MeanLogPrecision {
  double mean;
  double log_precision;
};

/// Joint draw of (mu, log tau) from the normal-gamma full conditional.
inline MeanLogPrecision draw_mu_tau_leaf(const NormalStats& s, const NormalGammaLeafPrior& prior, Rng& rng) {
  const NormalGammaPosterior post = normal_gamma_posterior(s, prior);
  const double log_tau = rng.log_gamma(post.shape) - std::log(post.rate);
  const double mu = rng.normal(post.mean, std::exp(-0.5 * log_tau) / std::sqrt(post.kappa));
  return {mu, log_tau};
}

}  // namespace sharedforest
