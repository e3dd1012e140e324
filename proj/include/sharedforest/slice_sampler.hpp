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

#include "sharedforest/error.hpp"
#include "sharedforest/rng.hpp"

namespace sharedforest {

/// Univariate slice sampler with stepping out and shrinkage.
/// `log_density` is evaluated on an unbounded real line.
template <typename LogDensity>
double slice_sample(double x0, LogDensity&& log_density, Rng& rng, double width = 1.0,
                    int max_steps = 64) {
  const double f0 = log_density(x0);
  if (!std::isfinite(f0)) throw NumericError("slice sampler started at a point of zero density");
  const double level = f0 - rng.exponential();

  double lo = x0 - width * rng.uniform();
  double hi = lo + width;
  int j = static_cast<int>(std::floor(max_steps * rng.uniform()));
  int k = max_steps - 1 - j;
  while (j-- > 0 && log_density(lo) > level) lo -= width;
  while (k-- > 0 && log_density(hi) > level) hi += width;

  for (int iter = 0; iter < 10000; ++iter) {
    const double x1 = rng.uniform(lo, hi);
    if (log_density(x1) > level) return x1;
    if (x1 < x0) lo = x1;
    else hi = x1;
  }
  return x0;
}

}  // namespace sharedforest
