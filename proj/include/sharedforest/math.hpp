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
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "sharedforest/rng.hpp"

namespace sharedforest {

inline constexpr double kLogTwoPi = 1.8378770664093454836;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double digamma(double x) { return boost::math::digamma(x); }
inline double trigamma(double x) { return boost::math::trigamma(x); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * z * z;
}

/// log Phi(x), stable far into the lower tail.
inline double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(normal_cdf(x));
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * kLogTwoPi + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

inline double normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return kNegInf;
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double total = 0.0;
  for (double v : values) total += std::exp(v - m);
  return m + std::log(total);
}

/// log density of a half-Cauchy(0, scale) at x > 0.
inline double half_cauchy_log_pdf(double x, double scale) {
  const double z = x / scale;
  return std::log(2.0 / (std::numbers::pi * scale)) - std::log1p(z * z);
}

/// Standard normal truncated to (lower, inf). Inverse-cdf sampling while the
/// bound is within five sd of the mode; beyond that an exponential-proposal
/// rejection sampler keeps the draw finite.
inline double draw_normal_above(double lower, Rng& rng) {
  if (lower <= 5.0) {
    const double tail = std::erfc(lower / std::numbers::sqrt2);
    return std::numbers::sqrt2 * boost::math::erfc_inv(rng.uniform() * tail);
  }
  const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
  for (;;) {
    const double e = lower + rng.exponential() / rate;
    const double d = e - rate;
    if (std::log(rng.uniform()) <= -0.5 * d * d) return e;
  }
}

/// N(mean, 1) truncated to (0, inf) when positive, else (-inf, 0).
inline double draw_truncated_unit_normal(double mean, bool positive, Rng& rng) {
  constexpr double kTiny = std::numeric_limits<double>::min();
  if (positive) return std::max(kTiny, mean + draw_normal_above(-mean, rng));
  return std::min(-kTiny, mean - draw_normal_above(mean, rng));
}

}  // namespace sharedforest
