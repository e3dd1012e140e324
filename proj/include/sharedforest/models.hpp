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

// Model wrappers over the shared-forest engine.
//
//   mixed             Pr(Z=1|x) = Phi(theta0 + h_theta(x)),  Y ~ N(mu(x), sigma^2)
//   gamma_hurdle      Pr(Y>0|x) = Phi(theta0 + h_theta(x)),  Y|Y>0 ~ Gamma(alpha, alpha e^{lambda0 + h_lambda(x)})
//   lognormal_hurdle  Pr(Y>0|x) = Phi(theta0 + h_theta(x)),  log Y|Y>0 ~ N(mu(x), e^{-lambda0 - h_lambda(x)})
//
// With shared = false the binary part and the continuous part get separate
// forests (and separate split probabilities).

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "sharedforest/components.hpp"
#include "sharedforest/data_io.hpp"
#include "sharedforest/error.hpp"
#include "sharedforest/math.hpp"
#include "sharedforest/rng.hpp"
#include "sharedforest/sampler.hpp"

namespace sharedforest {

struct PriorConfig {
  std::size_t num_trees = 50;
  TreePriorParams tree;
  double k_mu = 1.5;
  double k_lambda = 1.5;
  double a_lambda = 0.5;                // leaf scale of the log-precision forest (log-normal)
  std::optional<double> a_lambda_gamma;  // overrides k_lambda * sd(log y) for the gamma model
  double alpha_scale = 1.0;             // A in alpha^{-1/2} ~ half-Cauchy(0, A)
  double k_theta = 2.0;                 // probit leaf sd 3 / (k_theta sqrt(T))
  double theta0_prior_sd = 10.0;
  double sigma_scale = 1.0;  // half-Cauchy scale on sigma (mixed) and sigma0 (log-normal)
  double lambda0_shape = 1.0;
  double lambda0_rate = 1.0;
  bool sample_leaf_scale = false;
  bool sparse = true;
  bool update_xi = true;
  double xi = 1.0;
  std::size_t xi_grid = 1000;
  MoveMix moves;

  void check() const {
    tree.check();
    if (num_trees == 0) throw ConfigError("prior.num_trees must be at least 1");
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("prior.") + name + " must be positive");
    };
    positive(k_mu, "k_mu");
    positive(k_lambda, "k_lambda");
    positive(a_lambda, "a_lambda");
    if (a_lambda_gamma) positive(*a_lambda_gamma, "a_lambda_gamma");
    positive(alpha_scale, "alpha_scale");
    positive(k_theta, "k_theta");
    positive(theta0_prior_sd, "theta0_prior_sd");
    positive(sigma_scale, "sigma_scale");
    positive(lambda0_shape, "lambda0_shape");
    positive(lambda0_rate, "lambda0_rate");
    positive(xi, "xi");
  }

  ForestConfig forest() const {
    ForestConfig f;
    f.num_trees = num_trees;
    f.tree_prior = tree;
    f.moves = moves;
    f.sparse_splits = sparse;
    f.update_xi = update_xi;
    f.xi = xi;
    f.xi_grid = xi_grid;
    return f;
  }
};

/// Leaf priors after the default-prior calculus.
struct ResolvedPrior {
  double sigma_theta = 0.0;
  double leaf_sd = 0.0;  // Gaussian mean leaves (mixed)
  LogGammaLeafPrior log_gamma;
  double kappa = 0.0;
  double a_lambda = 0.0;
};

inline double probit_leaf_sd(const PriorConfig& cfg) {
  return 3.0 / (cfg.k_theta * std::sqrt(static_cast<double>(cfg.num_trees)));
}

inline ResolvedPrior default_prior_mixed(const PriorConfig& cfg) {
  cfg.check();
  ResolvedPrior r;
  r.sigma_theta = probit_leaf_sd(cfg);
  r.leaf_sd = cfg.k_mu / std::sqrt(static_cast<double>(cfg.num_trees));
  return r;
}

inline ResolvedPrior default_prior_lognormal(const WorkingResponse& response, const PriorConfig& cfg) {
  cfg.check();
  if (response.num_positive == 0) throw DataError(DataErrorCode::DegenerateResponse, "all responses are zero");
  if (response.num_positive < 2)
    throw DataError(DataErrorCode::DegenerateResponse, "fewer than two positive responses");
  const auto t = static_cast<double>(cfg.num_trees);
  ResolvedPrior r;
  r.sigma_theta = probit_leaf_sd(cfg);
  r.a_lambda = cfg.a_lambda;
  r.log_gamma = solve_loggamma_hyperparams(cfg.a_lambda, t);
  r.kappa = t / (cfg.k_mu * cfg.k_mu);
  return r;
}

/// `y` is the raw response; only its positive entries are used.
inline ResolvedPrior default_prior_gamma(std::span<const double> y, const PriorConfig& cfg) {
  cfg.check();
  std::vector<double> logs;
  for (double v : y)
    if (v > 0.0) logs.push_back(std::log(v));
  if (logs.size() < 2) throw DataError(DataErrorCode::DegenerateResponse, "fewer than two positive responses");
  const auto [mean, sd] = detail::mean_sd(logs);
  (void)mean;
  const auto t = static_cast<double>(cfg.num_trees);
  ResolvedPrior r;
  r.sigma_theta = probit_leaf_sd(cfg);
  r.a_lambda = cfg.a_lambda_gamma ? *cfg.a_lambda_gamma : cfg.k_lambda * sd;
  if (!(r.a_lambda > 0.0))
    throw DataError(DataErrorCode::DegenerateResponse, "log of the positive responses has zero variance");
  r.log_gamma = solve_loggamma_hyperparams(r.a_lambda, t);
  return r;
}

struct MeanVariance {
  double mean;
  double variance;
};

/// Moments of Y | Y > 0 under the gamma model on the working scale.
inline MeanVariance gamma_conditional_moments(double lambda0, double h_lambda, double alpha) {
  const double mean = std::exp(-lambda0 - h_lambda);
  return {mean, mean * mean / alpha};
}

/// m(x) = exp(mu + s2/2) and s^2(x) = m^2 (exp(s2) - 1) for log Y ~ N(mu, s2).
inline MeanVariance lognormal_conditional_moments(double mu, double log_variance) {
  const double s2 = std::exp(log_variance);
  const double m = std::exp(mu + 0.5 * s2);
  return {m, m * m * std::expm1(s2)};
}

/// Forest sums of each model function at one point (working scale).
struct FunctionValues {
  double theta = 0.0;
  double mu = 0.0;
  double lambda = 0.0;
};

/// Model quantities at one point on the original response scale.
struct PointSummary {
  double pi = 0.0;         // Pr(Y > 0) or Pr(Z = 1)
  double mean = 0.0;       // E(Y | Y > 0) or E(Y)
  double sd = 0.0;         // sd(Y | Y > 0) or sd(Y)
  double location = 0.0;   // mean of log Y (log-normal) or of Y (mixed); log mean (gamma)
  double log_scale_sd = 0.0;  // sd of log Y (log-normal); noise sd (mixed); 1/sqrt(alpha) (gamma)
};

/// Observation densities and transforms on the original scale.
class ObservationModel {
 public:
  ObservationModel() = default;
  explicit ObservationModel(ResponseScaling scaling) : scaling_(scaling) {}

  ModelKind kind() const { return scaling_.kind; }
  const ResponseScaling& scaling() const { return scaling_; }

  PointSummary summarize(const FunctionValues& f, const Globals& g) const {
    PointSummary s;
    s.pi = normal_cdf(g.theta0 + f.theta);
    switch (scaling_.kind) {
      case ModelKind::MixedResponse:
        s.mean = scaling_.center + scaling_.scale * f.mu;
        s.sd = scaling_.scale * g.sigma;
        s.location = s.mean;
        s.log_scale_sd = s.sd;
        break;
      case ModelKind::GammaHurdle: {
        const MeanVariance mv = gamma_conditional_moments(g.lambda0, f.lambda, g.alpha);
        s.mean = scaling_.scale * mv.mean;
        s.sd = scaling_.scale * std::sqrt(mv.variance);
        s.location = std::log(s.mean);
        s.log_scale_sd = 1.0 / std::sqrt(g.alpha);
        break;
      }
      case ModelKind::LogNormalHurdle: {
        s.location = scaling_.center + scaling_.scale * f.mu;
        const double log_var = 2.0 * std::log(scaling_.scale) - g.lambda0 - f.lambda;
        s.log_scale_sd = std::exp(0.5 * log_var);
        const MeanVariance mv = lognormal_conditional_moments(s.location, log_var);
        s.mean = mv.mean;
        s.sd = std::sqrt(mv.variance);
        break;
      }
    }
    return s;
  }

  /// log Pr of the binary part: Y > 0 (hurdle) or Z (mixed).
  double log_binary(const FunctionValues& f, const Globals& g, bool positive) const {
    const double eta = g.theta0 + f.theta;
    return positive ? log_normal_cdf(eta) : log_normal_cdf(-eta);
  }

  /// log density of the continuous part at y on the original scale; 0 for a
  /// hurdle zero.
  double log_regression(const FunctionValues& f, const Globals& g, double y) const {
    switch (scaling_.kind) {
      case ModelKind::MixedResponse: {
        const PointSummary s = summarize(f, g);
        return normal_log_pdf(y, s.mean, s.sd);
      }
      case ModelKind::GammaHurdle: {
        if (!(y > 0.0)) return 0.0;
        const double rate = g.alpha * std::exp(g.lambda0 + f.lambda) / scaling_.scale;
        return g.alpha * std::log(rate) + (g.alpha - 1.0) * std::log(y) - rate * y - std::lgamma(g.alpha);
      }
      case ModelKind::LogNormalHurdle: {
        if (!(y > 0.0)) return 0.0;
        const PointSummary s = summarize(f, g);
        return normal_log_pdf(std::log(y), s.location, s.log_scale_sd) - std::log(y);
      }
    }
    return 0.0;
  }

  /// cdf of the continuous part at y (of Y | Y > 0 for hurdle models).
  double cdf(const FunctionValues& f, const Globals& g, double y) const {
    switch (scaling_.kind) {
      case ModelKind::MixedResponse: {
        const PointSummary s = summarize(f, g);
        return normal_cdf((y - s.mean) / s.sd);
      }
      case ModelKind::GammaHurdle: {
        if (!(y > 0.0)) return 0.0;
        const double rate = g.alpha * std::exp(g.lambda0 + f.lambda) / scaling_.scale;
        return boost::math::gamma_p(g.alpha, rate * y);
      }
      case ModelKind::LogNormalHurdle: {
        if (!(y > 0.0)) return 0.0;
        const PointSummary s = summarize(f, g);
        return normal_cdf((std::log(y) - s.location) / s.log_scale_sd);
      }
    }
    return 0.0;
  }

 private:
  ResponseScaling scaling_;
};

/// Where each model function lives: forest index and slot within its trees.
struct SlotRef {
  int forest = -1;
  int slot = -1;
  bool present() const { return forest >= 0; }
};

struct SlotLayout {
  SlotRef theta;
  SlotRef mu;
  SlotRef lambda;

  static SlotLayout make(ModelKind kind, bool shared) {
    SlotLayout l;
    l.theta = {0, 0};
    const int f = shared ? 0 : 1;
    const int base = shared ? 1 : 0;
    switch (kind) {
      case ModelKind::MixedResponse: l.mu = {f, base}; break;
      case ModelKind::GammaHurdle: l.lambda = {f, base}; break;
      case ModelKind::LogNormalHurdle:
        l.mu = {f, base};
        l.lambda = {f, base + 1};
        break;
    }
    return l;
  }
};

/// One retained posterior state: one forest when shared, otherwise the
/// binary forest followed by the continuous forest.
struct PosteriorDraw {
  std::size_t iteration = 0;
  std::vector<ForestSnapshot> forests;

  Globals globals() const {
    Globals g = forests.back().globals;
    g.theta0 = forests.front().globals.theta0;
    return g;
  }
};

inline FunctionValues evaluate_draw(const PosteriorDraw& draw, const SlotLayout& layout, std::span<const double> x) {
  FunctionValues f;
  auto eval = [&](SlotRef r) {
    if (!r.present()) return 0.0;
    return evaluate_forest(draw.forests[static_cast<std::size_t>(r.forest)].trees, static_cast<std::size_t>(r.slot), x);
  };
  f.theta = eval(layout.theta);
  f.mu = eval(layout.mu);
  f.lambda = eval(layout.lambda);
  return f;
}

struct ModelSpec {
  ModelKind kind = ModelKind::LogNormalHurdle;
  PriorConfig prior;
  bool shared = true;
};

struct ChainSettings {
  std::size_t iterations = 2000;  // total sweeps including burn-in
  std::size_t burnin = 1000;
  std::size_t thin = 1;
  std::size_t chains = 1;

  void check() const {
    if (iterations <= burnin) throw ConfigError("iterations must exceed burnin");
    if (thin == 0) throw ConfigError("thin must be at least 1");
    if (chains == 0) throw ConfigError("chains must be at least 1");
  }
  std::size_t retained_per_chain() const { return (iterations - burnin + thin - 1) / thin; }
};

/// Posterior output of a fit, with per-draw training diagnostics.
struct FitResult {
  ModelSpec spec;
  ResolvedPrior prior;
  ObservationModel observation;
  SlotLayout layout;
  std::vector<PosteriorDraw> draws;
  /// [draw][row] log densities of the binary and continuous parts.
  std::vector<std::vector<double>> log_binary;
  std::vector<std::vector<double>> log_regression;
  /// Per row: posterior-mean cdf and posterior means of location / scale.
  std::vector<double> mean_cdf;
  std::vector<double> mean_location;
  std::vector<double> mean_log_scale_sd;
  std::vector<MoveCounts> moves;  // per forest, summed over chains
  std::vector<std::vector<double>> split_prob_mean;  // per forest
};

/// Builds the engines for one chain of a model.
class ModelSampler {
 public:
  ModelSampler(std::span<const double> x, std::size_t num_axes, std::span<const double> y,
               const WorkingResponse& response, const ModelSpec& spec, const ResolvedPrior& prior)
      : spec_(spec), observation_(response.scaling), layout_(SlotLayout::make(spec.kind, spec.shared)),
        y_(y.begin(), y.end()), positive_(response.positive) {
    const std::vector<double> xv(x.begin(), x.end());
    const ForestConfig fc = spec.prior.forest();
    ProbitComponent::Params pp{prior.sigma_theta, spec.prior.theta0_prior_sd};
    auto probit = std::make_unique<ProbitComponent>(response.positive, pp);
    std::unique_ptr<LeafComponent> cont;
    const auto t = static_cast<double>(spec.prior.num_trees);
    switch (spec.kind) {
      case ModelKind::MixedResponse: {
        GaussianComponent::Params gp;
        gp.leaf_sd = prior.leaf_sd;
        gp.sigma_scale = spec.prior.sigma_scale;
        cont = std::make_unique<GaussianComponent>(response.value, gp);
        break;
      }
      case ModelKind::GammaHurdle: {
        LogGammaComponent::Params gp;
        gp.leaf = prior.log_gamma;
        gp.alpha_scale = spec.prior.alpha_scale;
        gp.lambda0_shape = spec.prior.lambda0_shape;
        gp.lambda0_rate = spec.prior.lambda0_rate;
        gp.leaf_scale_prior.enabled = spec.prior.sample_leaf_scale;
        gp.leaf_scale = prior.a_lambda;
        gp.num_trees = t;
        cont = std::make_unique<LogGammaComponent>(response.value, response.positive, gp);
        break;
      }
      case ModelKind::LogNormalHurdle: {
        NormalGammaComponent::Params np;
        np.leaf = {prior.log_gamma.shape, prior.log_gamma.rate, prior.kappa};
        np.sigma0_scale = spec.prior.sigma_scale;
        np.leaf_scale_prior.enabled = spec.prior.sample_leaf_scale;
        np.leaf_scale = prior.a_lambda;
        np.num_trees = t;
        cont = std::make_unique<NormalGammaComponent>(response.value, response.positive, np);
        break;
      }
    }
    if (spec.shared) {
      std::vector<std::unique_ptr<LeafComponent>> comps;
      comps.push_back(std::move(probit));
      comps.push_back(std::move(cont));
      engines_.push_back(std::make_unique<SharedForestSampler>(xv, num_axes, std::move(comps), fc));
    } else {
      std::vector<std::unique_ptr<LeafComponent>> a;
      a.push_back(std::move(probit));
      engines_.push_back(std::make_unique<SharedForestSampler>(xv, num_axes, std::move(a), fc));
      std::vector<std::unique_ptr<LeafComponent>> b;
      b.push_back(std::move(cont));
      engines_.push_back(std::make_unique<SharedForestSampler>(xv, num_axes, std::move(b), fc));
    }
  }

  void initialize(Rng& rng) {
    for (auto& e : engines_) e->initialize(rng);
  }

  void sweep(Rng& rng) {
    for (auto& e : engines_) e->sweep(rng);
  }

  std::size_t num_forests() const { return engines_.size(); }
  SharedForestSampler& engine(std::size_t k) { return *engines_[k]; }
  const SlotLayout& layout() const { return layout_; }
  const ObservationModel& observation() const { return observation_; }

  PosteriorDraw draw(std::size_t iteration) const {
    PosteriorDraw d;
    d.iteration = iteration;
    for (const auto& e : engines_) d.forests.push_back(e->snapshot());
    return d;
  }

  Globals globals() const {
    Globals g = engines_.back()->globals();
    g.theta0 = engines_.front()->globals().theta0;
    return g;
  }

  /// Function values at training row i from the maintained fits.
  FunctionValues training_values(std::size_t i) const {
    FunctionValues f;
    auto get = [&](SlotRef r) {
      if (!r.present()) return 0.0;
      return engines_[static_cast<std::size_t>(r.forest)]->fits()[static_cast<std::size_t>(r.slot)][i];
    };
    f.theta = get(layout_.theta);
    f.mu = get(layout_.mu);
    f.lambda = get(layout_.lambda);
    return f;
  }

  std::size_t num_observations() const { return y_.size(); }
  double response(std::size_t i) const { return y_[i]; }
  bool positive(std::size_t i) const { return positive_[i] != 0; }

 private:
  ModelSpec spec_;
  ObservationModel observation_;
  SlotLayout layout_;
  std::vector<double> y_;
  std::vector<char> positive_;
  std::vector<std::unique_ptr<SharedForestSampler>> engines_;
};

inline ResolvedPrior resolve_prior(const ModelSpec& spec, std::span<const double> y, const WorkingResponse& r) {
  switch (spec.kind) {
    case ModelKind::MixedResponse: return default_prior_mixed(spec.prior);
    case ModelKind::GammaHurdle: return default_prior_gamma(y, spec.prior);
    case ModelKind::LogNormalHurdle: return default_prior_lognormal(r, spec.prior);
  }
  return {};
}

namespace detail {

struct ChainOutput {
  std::vector<PosteriorDraw> draws;
  std::vector<std::vector<double>> log_binary;
  std::vector<std::vector<double>> log_regression;
  std::vector<double> cdf_sum;
  std::vector<double> location_sum;
  std::vector<double> scale_sum;
  std::vector<MoveCounts> moves;
  std::vector<std::vector<double>> split_prob_sum;
};

inline ChainOutput run_chain(ModelSampler& sampler, const ChainSettings& chain, bool diagnostics, Rng& rng) {
  ChainOutput out;
  const std::size_t n = sampler.num_observations();
  out.cdf_sum.assign(n, 0.0);
  out.location_sum.assign(n, 0.0);
  out.scale_sum.assign(n, 0.0);
  out.split_prob_sum.assign(sampler.num_forests(), std::vector<double>(sampler.engine(0).num_axes(), 0.0));
  sampler.initialize(rng);
  const ObservationModel& obs = sampler.observation();
  for (std::size_t it = 1; it <= chain.iterations; ++it) {
    sampler.sweep(rng);
    if (it <= chain.burnin || (it - chain.burnin - 1) % chain.thin != 0) continue;
    out.draws.push_back(sampler.draw(it));
    for (std::size_t k = 0; k < sampler.num_forests(); ++k) {
      const auto s = sampler.engine(k).split_probabilities().probabilities();
      for (std::size_t j = 0; j < s.size(); ++j) out.split_prob_sum[k][j] += s[j];
    }
    if (!diagnostics) continue;
    const Globals g = sampler.globals();
    std::vector<double> lb(n);
    std::vector<double> lr(n);
    for (std::size_t i = 0; i < n; ++i) {
      const FunctionValues f = sampler.training_values(i);
      const double y = sampler.response(i);
      lb[i] = obs.log_binary(f, g, sampler.positive(i));
      lr[i] = obs.log_regression(f, g, y);
      if (obs.kind() == ModelKind::MixedResponse || y > 0.0) {
        out.cdf_sum[i] += obs.cdf(f, g, y);
        const PointSummary ps = obs.summarize(f, g);
        out.location_sum[i] += ps.location;
        out.scale_sum[i] += ps.log_scale_sd;
      }
    }
    out.log_binary.push_back(std::move(lb));
    out.log_regression.push_back(std::move(lr));
  }
  for (std::size_t k = 0; k < sampler.num_forests(); ++k) out.moves.push_back(sampler.engine(k).move_counts());
  return out;
}

}  // namespace detail

/// Runs `chains` independent chains (chain c seeded by derive_seed(seed, c))
/// and pools their retained draws in chain order.
inline FitResult fit_model(std::span<const double> x, std::size_t num_axes, std::span<const double> y,
                           std::span<const double> binary, const ModelSpec& spec, const ChainSettings& chain,
                           std::uint64_t seed, bool diagnostics = true) {
  chain.check();
  spec.prior.check();
  const WorkingResponse response = preprocess_response(y, spec.kind, binary);
  FitResult result;
  result.spec = spec;
  result.prior = resolve_prior(spec, y, response);
  result.observation = ObservationModel(response.scaling);
  result.layout = SlotLayout::make(spec.kind, spec.shared);

  std::vector<detail::ChainOutput> outputs(chain.chains);
  std::vector<std::exception_ptr> errors(chain.chains);
  auto work = [&](std::size_t c) {
    try {
      Rng rng(derive_seed(seed, c));
      ModelSampler sampler(x, num_axes, y, response, spec, result.prior);
      outputs[c] = detail::run_chain(sampler, chain, diagnostics, rng);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (chain.chains == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < chain.chains; ++c) threads.emplace_back(work, c);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  const std::size_t n = y.size();
  result.mean_cdf.assign(n, 0.0);
  result.mean_location.assign(n, 0.0);
  result.mean_log_scale_sd.assign(n, 0.0);
  for (auto& o : outputs) {
    for (auto& d : o.draws) result.draws.push_back(std::move(d));
    for (auto& v : o.log_binary) result.log_binary.push_back(std::move(v));
    for (auto& v : o.log_regression) result.log_regression.push_back(std::move(v));
    for (std::size_t i = 0; i < n; ++i) {
      result.mean_cdf[i] += o.cdf_sum[i];
      result.mean_location[i] += o.location_sum[i];
      result.mean_log_scale_sd[i] += o.scale_sum[i];
    }
    if (result.moves.empty()) {
      result.moves = o.moves;
      result.split_prob_mean = o.split_prob_sum;
    } else {
      for (std::size_t k = 0; k < o.moves.size(); ++k) {
        for (std::size_t m = 0; m < 3; ++m) {
          result.moves[k].proposed[m] += o.moves[k].proposed[m];
          result.moves[k].accepted[m] += o.moves[k].accepted[m];
        }
        for (std::size_t j = 0; j < o.split_prob_sum[k].size(); ++j)
          result.split_prob_mean[k][j] += o.split_prob_sum[k][j];
      }
    }
  }
  const auto s = static_cast<double>(result.draws.size());
  if (s > 0) {
    for (auto& v : result.split_prob_mean)
      for (double& a : v) a /= s;
    if (diagnostics)
      for (std::size_t i = 0; i < n; ++i) {
        result.mean_cdf[i] /= s;
        result.mean_location[i] /= s;
        result.mean_log_scale_sd[i] /= s;
      }
  }
  return result;
}

/// Posterior mean and central 95% interval.
struct IntervalSummary {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Type-7 sample quantile of a sorted vector.
inline double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline IntervalSummary summarize_draws(std::vector<double> values, double level = 0.95) {
  IntervalSummary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  s.lower = sorted_quantile(values, 0.5 * (1.0 - level));
  s.upper = sorted_quantile(values, 1.0 - 0.5 * (1.0 - level));
  return s;
}

struct Prediction {
  IntervalSummary pi;
  IntervalSummary mean;
  IntervalSummary sd;
  IntervalSummary location;
  IntervalSummary log_scale_sd;
};

/// Per-row posterior summaries at normalized predictor rows `x` (row-major).
/// Rows outside [0, 1] are clamped; the count of clamped cells is returned
/// through `clamped` when given.
inline std::vector<Prediction> predict(const FitResult& fit, std::span<const double> x, std::size_t num_axes,
                                       std::size_t* clamped = nullptr) {
  if (num_axes == 0 || x.size() % num_axes != 0) throw DataError(DataErrorCode::RaggedRow, "predict: ragged rows");
  const std::size_t m = x.size() / num_axes;
  std::vector<Prediction> out(m);
  std::vector<double> row(num_axes);
  std::size_t nclamp = 0;
  const std::size_t s = fit.draws.size();
  std::vector<double> pi(s), mean(s), sd(s), loc(s), lsd(s);
  std::vector<Globals> globals(s);
  for (std::size_t d = 0; d < s; ++d) globals[d] = fit.draws[d].globals();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < num_axes; ++j) {
      const double v = x[i * num_axes + j];
      row[j] = std::clamp(v, 0.0, 1.0);
      if (row[j] != v) ++nclamp;
    }
    for (std::size_t d = 0; d < s; ++d) {
      const PointSummary ps =
          fit.observation.summarize(evaluate_draw(fit.draws[d], fit.layout, row), globals[d]);
      pi[d] = ps.pi;
      mean[d] = ps.mean;
      sd[d] = ps.sd;
      loc[d] = ps.location;
      lsd[d] = ps.log_scale_sd;
    }
    out[i] = {summarize_draws(pi), summarize_draws(mean), summarize_draws(sd), summarize_draws(loc),
              summarize_draws(lsd)};
  }
  if (clamped) *clamped = nclamp;
  return out;
}

}  // namespace sharedforest
