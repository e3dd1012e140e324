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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sharedforest/data_io.hpp"
#include "sharedforest/error.hpp"
#include "sharedforest/math.hpp"
#include "sharedforest/models.hpp"
#include "sharedforest/rng.hpp"

namespace sharedforest {

/// 10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5; later coordinates unused.
inline double friedman(std::span<const double> x) {
  if (x.size() < 5) throw ConfigError("friedman: needs at least 5 coordinates");
  return 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) + 20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] +
         5.0 * x[4];
}

/// Mean and sd of friedman(X) for X uniform on the unit cube.
inline constexpr double kFriedmanMean = 14.413297342419857;
inline constexpr double kFriedmanSd = 4.881235885652424;

/// friedman standardized to mean 0 and sd 1 under uniform inputs.
inline double friedman_standardized(std::span<const double> x) {
  return (friedman(x) - kFriedmanMean) / kFriedmanSd;
}

struct SimulationSpec {
  std::size_t n = 250;
  std::size_t p = 5;
  double sigma = 1.0;        // noise sd of the continuous outcome
  double sigma_theta = 4.0;  // signal scale of the binary outcome
  std::size_t replications = 20;
  std::size_t num_trees = 50;
  bool shared = true;
  std::uint64_t seed = 0;

  void check() const {
    if (n < 1) throw ConfigError("simulation: n must be at least 1");
    if (p < 5) throw ConfigError("simulation: P must be at least 5");
    if (!(sigma > 0.0)) throw ConfigError("simulation: sigma must be positive");
    if (!(sigma_theta >= 0.0)) throw ConfigError("simulation: sigma_theta must be nonnegative");
  }
};

/// Binary signal of the mixed design: h(x) = (f(x) - E f) / (4 sd f), so that
/// sigma_theta = 4 makes sigma_theta h(X) standard normal in distribution.
inline double mixed_signal(std::span<const double> x) { return 0.25 * friedman_standardized(x); }

inline double mixed_true_probability(std::span<const double> x, double sigma_theta) {
  return normal_cdf(sigma_theta * mixed_signal(x));
}

inline std::vector<double> uniform_design(std::size_t n, std::size_t p, Rng& rng) {
  std::vector<double> x(n * p);
  for (double& v : x) v = rng.uniform();
  return x;
}

/// Y ~ N(f(x), sigma^2) and independently Z ~ Bernoulli(Phi(sigma_theta h(x))).
/// Predictors are already uniform on the unit cube and are used as is.
inline Dataset simulate_mixed(const SimulationSpec& spec, Rng& rng) {
  spec.check();
  Dataset d;
  d.n = spec.n;
  d.p = spec.p;
  for (std::size_t j = 0; j < spec.p; ++j) d.predictor_names.push_back("x" + std::to_string(j + 1));
  d.raw_x = uniform_design(spec.n, spec.p, rng);
  d.x = d.raw_x;
  d.y.resize(spec.n);
  d.binary.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto row = d.row(i);
    d.y[i] = rng.normal(friedman(row), spec.sigma);
    d.binary[i] = rng.uniform() < mixed_true_probability(row, spec.sigma_theta) ? 1.0 : 0.0;
  }
  return d;
}

/// Synthetic hurdle truth driven by the standardized Friedman surface z(x):
/// Pr(Y>0) = Phi(pi_offset + pi_slope z), and for the positive part either
///   gamma:      mean exp(mean_offset + mean_slope z), shape alpha
///   log-normal: log Y ~ N(mean_offset + mean_slope z, (log_sd * (x1 > 1/2 ? sqrt(ratio) : 1))^2)
struct HurdleDesign {
  ModelKind kind = ModelKind::LogNormalHurdle;
  double pi_offset = 0.3;
  double pi_slope = 0.8;
  double mean_offset = 1.0;
  double mean_slope = 0.6;
  double alpha = 2.0;
  double log_sd = 0.6;
  double variance_ratio = 1.0;
};

inline PointSummary hurdle_truth(const HurdleDesign& design, std::span<const double> x) {
  const double z = friedman_standardized(x);
  PointSummary s;
  s.pi = normal_cdf(design.pi_offset + design.pi_slope * z);
  const double loc = design.mean_offset + design.mean_slope * z;
  if (design.kind == ModelKind::GammaHurdle) {
    s.mean = std::exp(loc);
    s.sd = s.mean / std::sqrt(design.alpha);
    s.location = loc;
    s.log_scale_sd = 1.0 / std::sqrt(design.alpha);
  } else {
    s.location = loc;
    s.log_scale_sd = design.log_sd * (x[0] > 0.5 ? std::sqrt(design.variance_ratio) : 1.0);
    const MeanVariance mv = lognormal_conditional_moments(loc, 2.0 * std::log(s.log_scale_sd));
    s.mean = mv.mean;
    s.sd = std::sqrt(mv.variance);
  }
  return s;
}

inline Dataset simulate_hurdle(const HurdleDesign& design, std::size_t n, std::size_t p, Rng& rng) {
  if (p < 5) throw ConfigError("simulate_hurdle: P must be at least 5");
  Dataset d;
  d.n = n;
  d.p = p;
  for (std::size_t j = 0; j < p; ++j) d.predictor_names.push_back("x" + std::to_string(j + 1));
  d.raw_x = uniform_design(n, p, rng);
  d.x = d.raw_x;
  d.y.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const PointSummary t = hurdle_truth(design, d.row(i));
    if (!(rng.uniform() < t.pi)) continue;
    if (design.kind == ModelKind::GammaHurdle) {
      d.y[i] = std::max(std::numeric_limits<double>::min(), rng.gamma(design.alpha, design.alpha / t.mean));
    } else {
      d.y[i] = std::exp(rng.normal(t.location, t.log_scale_sd));
    }
  }
  return d;
}

/// Mean over points of pi log(pi / pihat) + (1 - pi) log((1 - pi) / (1 - pihat)),
/// with pihat clamped to [1e-6, 1 - 1e-6].
inline double cross_entropy_loss(std::span<const double> pi, std::span<const double> pi_hat) {
  if (pi.size() != pi_hat.size() || pi.empty()) throw ConfigError("cross_entropy_loss: size mismatch");
  constexpr double kClamp = 1e-6;
  double total = 0.0;
  for (std::size_t k = 0; k < pi.size(); ++k) {
    const double p = pi[k];
    const double q = std::clamp(pi_hat[k], kClamp, 1.0 - kClamp);
    double term = 0.0;
    if (p > 0.0) term += p * std::log(p / q);
    if (p < 1.0) term += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
    total += term;
  }
  return total / static_cast<double>(pi.size());
}

/// Monte Carlo loss over `points` fresh uniform points in [0,1]^P.
inline double cross_entropy_loss(const std::function<double(std::span<const double>)>& pi,
                                 const std::function<double(std::span<const double>)>& pi_hat, std::size_t p,
                                 std::size_t points, Rng& rng) {
  const std::vector<double> x = uniform_design(points, p, rng);
  std::vector<double> a(points), b(points);
  for (std::size_t k = 0; k < points; ++k) {
    const std::span<const double> row(x.data() + k * p, p);
    a[k] = pi(row);
    b[k] = pi_hat(row);
  }
  return cross_entropy_loss(a, b);
}

/// Posterior mean of pi(x) at each row of `x`.
inline std::vector<double> posterior_mean_probability(const FitResult& fit, std::span<const double> x,
                                                      std::size_t p) {
  const std::size_t m = x.size() / p;
  std::vector<double> out(m, 0.0);
  std::vector<Globals> g(fit.draws.size());
  for (std::size_t d = 0; d < fit.draws.size(); ++d) g[d] = fit.draws[d].globals();
  for (std::size_t i = 0; i < m; ++i) {
    const std::span<const double> row(x.data() + i * p, p);
    double sum = 0.0;
    for (std::size_t d = 0; d < fit.draws.size(); ++d) {
      const double theta = fit.layout.theta.present()
                               ? evaluate_forest(fit.draws[d].forests[0].trees, 0, row)
                               : 0.0;
      sum += normal_cdf(g[d].theta0 + theta);
    }
    out[i] = sum / static_cast<double>(fit.draws.size());
  }
  return out;
}

struct LpmlResult {
  std::vector<double> log_cpo;  // -inf for flagged rows
  std::vector<char> flagged;    // f = 0 under every draw
  double lpml = 0.0;            // sum over unflagged rows
  std::size_t excluded = 0;
};

/// Harmonic-mean CPO from log f(y_i | theta_s) stored as [draw][row]. The
/// inverse-density weights of each row are truncated at their
/// `truncation_quantile` sample quantile.
inline LpmlResult lpml(const std::vector<std::vector<double>>& log_density, double truncation_quantile = 0.999) {
  LpmlResult out;
  const std::size_t s = log_density.size();
  if (s == 0) throw ConfigError("lpml: no posterior draws");
  const std::size_t n = log_density.front().size();
  out.log_cpo.assign(n, kNegInf);
  out.flagged.assign(n, 0);
  std::vector<double> lw;
  lw.reserve(s);
  for (std::size_t i = 0; i < n; ++i) {
    lw.clear();
    bool any_finite = false;
    for (std::size_t d = 0; d < s; ++d) {
      const double v = log_density[d][i];
      if (std::isfinite(v)) any_finite = true;
      lw.push_back(-v);  // log weight = -log f
    }
    if (!any_finite) {
      out.flagged[i] = 1;
      ++out.excluded;
      continue;
    }
    std::vector<double> finite;
    for (double v : lw)
      if (std::isfinite(v)) finite.push_back(v);
    std::sort(finite.begin(), finite.end());
    const double cap = sorted_quantile(finite, truncation_quantile);
    for (double& v : lw) v = std::min(v, cap);
    out.log_cpo[i] = -(log_sum_exp(lw) - std::log(static_cast<double>(s)));
    out.lpml += out.log_cpo[i];
  }
  return out;
}

/// Table rows in the order Regression, Binary, Total.
struct LpmlTable {
  LpmlResult regression;
  LpmlResult binary;
  LpmlResult total;
};

inline LpmlTable lpml_table(const FitResult& fit, double truncation_quantile = 0.999) {
  LpmlTable t;
  t.regression = lpml(fit.log_regression, truncation_quantile);
  t.binary = lpml(fit.log_binary, truncation_quantile);
  std::vector<std::vector<double>> joint = fit.log_regression;
  for (std::size_t d = 0; d < joint.size(); ++d)
    for (std::size_t i = 0; i < joint[d].size(); ++i) joint[d][i] += fit.log_binary[d][i];
  t.total = lpml(joint, truncation_quantile);
  return t;
}

struct ResidualResult {
  std::vector<std::size_t> rows;
  std::vector<double> residuals;
  std::vector<char> clamped;
  std::size_t num_clamped = 0;
};

/// r_i = Phi^{-1}(F_i) over rows with include_i set, clamped to [-8, 8].
inline ResidualResult generalized_residuals(std::span<const double> cdf, std::span<const char> include) {
  constexpr double kLimit = 8.0;
  ResidualResult out;
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    if (!include[i]) continue;
    double r = 0.0;
    bool clamp = false;
    const double f = cdf[i];
    if (!(f > 0.0)) {
      r = -kLimit;
      clamp = true;
    } else if (!(f < 1.0)) {
      r = kLimit;
      clamp = true;
    } else {
      r = normal_quantile(f);
      if (std::abs(r) > kLimit) {
        r = std::copysign(kLimit, r);
        clamp = true;
      }
    }
    out.rows.push_back(i);
    out.residuals.push_back(r);
    out.clamped.push_back(clamp ? 1 : 0);
    out.num_clamped += clamp ? 1 : 0;
  }
  return out;
}

/// Residuals of the training rows of a fit: posterior-mean cdf, or with
/// plug_in the cdf at the posterior-mean location and scale (for the
/// log-normal model this is the standardized residual of log y).
inline ResidualResult generalized_residuals(const FitResult& fit, std::span<const double> y, bool plug_in = false) {
  std::vector<char> include(y.size());
  std::vector<double> cdf(y.size(), 0.0);
  const ModelKind kind = fit.spec.kind;
  for (std::size_t i = 0; i < y.size(); ++i) {
    include[i] = kind == ModelKind::MixedResponse || y[i] > 0.0;
    if (!include[i]) continue;
    if (!plug_in) {
      cdf[i] = fit.mean_cdf[i];
    } else {
      const double v = kind == ModelKind::MixedResponse ? y[i] : std::log(y[i]);
      cdf[i] = normal_cdf((v - fit.mean_location[i]) / fit.mean_log_scale_sd[i]);
    }
  }
  return generalized_residuals(cdf, include);
}

/// One grid cell of the sharing comparison.
struct ComparisonCell {
  std::size_t p = 5;
  double sigma_theta = 4.0;
  std::size_t num_trees = 50;
};

struct ComparisonConfig {
  std::vector<ComparisonCell> cells;
  std::size_t n = 250;
  double sigma = 1.0;
  std::size_t replications = 20;
  ChainSettings chain{1500, 500, 5, 1};
  PriorConfig prior;
  std::size_t loss_points = 10000;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: hardware concurrency
};

struct ComparisonRecord {
  std::size_t cell = 0;
  std::size_t replicate = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t fit_seed = 0;
  std::uint64_t loss_seed = 0;
  double shared_loss = 0.0;
  double separate_loss = 0.0;
};

struct ComparisonSummary {
  ComparisonCell cell;
  double shared_mean = 0.0;
  double shared_se = 0.0;
  double separate_mean = 0.0;
  double separate_se = 0.0;
};

struct ComparisonResult {
  std::vector<ComparisonRecord> records;
  std::vector<ComparisonSummary> summaries;
};

/// Seeds of replicate r in cell c: job k = c * replications + r uses
/// derive_seed(master, 3k) for the data, 3k+1 for both fits and 3k+2 for the
/// Monte Carlo points of the loss.
inline ComparisonRecord run_comparison_job(const ComparisonConfig& cfg, std::size_t cell, std::size_t rep) {
  const ComparisonCell& c = cfg.cells[cell];
  const std::uint64_t k = cell * cfg.replications + rep;
  ComparisonRecord rec;
  rec.cell = cell;
  rec.replicate = rep;
  rec.data_seed = derive_seed(cfg.seed, 3 * k);
  rec.fit_seed = derive_seed(cfg.seed, 3 * k + 1);
  rec.loss_seed = derive_seed(cfg.seed, 3 * k + 2);

  SimulationSpec sim;
  sim.n = cfg.n;
  sim.p = c.p;
  sim.sigma = cfg.sigma;
  sim.sigma_theta = c.sigma_theta;
  sim.num_trees = c.num_trees;
  Rng data_rng(rec.data_seed);
  const Dataset data = simulate_mixed(sim, data_rng);

  Rng loss_rng(rec.loss_seed);
  const std::vector<double> points = uniform_design(cfg.loss_points, c.p, loss_rng);
  std::vector<double> truth(cfg.loss_points);
  for (std::size_t k2 = 0; k2 < cfg.loss_points; ++k2)
    truth[k2] = mixed_true_probability({points.data() + k2 * c.p, c.p}, c.sigma_theta);

  for (bool shared : {true, false}) {
    ModelSpec spec;
    spec.kind = ModelKind::MixedResponse;
    spec.prior = cfg.prior;
    spec.prior.num_trees = c.num_trees;
    spec.shared = shared;
    const FitResult fit = fit_model(data.x, data.p, data.y, data.binary, spec, cfg.chain, rec.fit_seed, false);
    const double loss = cross_entropy_loss(truth, posterior_mean_probability(fit, points, c.p));
    (shared ? rec.shared_loss : rec.separate_loss) = loss;
  }
  return rec;
}

/// Runs every (cell, replicate) job; jobs are independent, so the result does
/// not depend on the number of worker threads.
inline ComparisonResult run_share_comparison(const ComparisonConfig& cfg) {
  if (cfg.cells.empty()) throw ConfigError("comparison: empty grid");
  if (cfg.replications == 0) throw ConfigError("comparison: replications must be at least 1");
  const std::size_t jobs = cfg.cells.size() * cfg.replications;
  ComparisonResult result;
  result.records.resize(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < jobs; k = next++) {
      try {
        result.records[k] = run_comparison_job(cfg, k / cfg.replications, k % cfg.replications);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::size_t threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t c = 0; c < cfg.cells.size(); ++c) {
    ComparisonSummary s;
    s.cell = cfg.cells[c];
    const auto r = static_cast<double>(cfg.replications);
    double a = 0, a2 = 0, b = 0, b2 = 0;
    for (std::size_t rep = 0; rep < cfg.replications; ++rep) {
      const auto& rec = result.records[c * cfg.replications + rep];
      a += rec.shared_loss;
      a2 += rec.shared_loss * rec.shared_loss;
      b += rec.separate_loss;
      b2 += rec.separate_loss * rec.separate_loss;
    }
    s.shared_mean = a / r;
    s.separate_mean = b / r;
    if (cfg.replications > 1) {
      s.shared_se = std::sqrt(std::max(0.0, (a2 - r * s.shared_mean * s.shared_mean) / (r - 1.0)) / r);
      s.separate_se = std::sqrt(std::max(0.0, (b2 - r * s.separate_mean * s.separate_mean) / (r - 1.0)) / r);
    }
    result.summaries.push_back(s);
  }
  return result;
}

}  // namespace sharedforest
