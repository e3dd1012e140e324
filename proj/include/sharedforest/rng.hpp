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
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace sharedforest {

/// SplitMix64 finalizer. Used to derive independent stream seeds from a
/// master seed: stream k of master m is seeded with derive_seed(m, k).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

/// Random source owned by one chain. Every sampler takes an explicit Rng&.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1); never returns 0 or 1.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return std_normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() { return -std::log(uniform()); }

  /// Gamma with shape/rate parameterization (mean shape/rate).
  double gamma(double shape, double rate) {
    std::gamma_distribution<double> g(shape, 1.0);
    return g(engine_) / rate;
  }

  /// log of a Gamma(shape, 1) draw, accurate for tiny shapes where the draw
  /// itself underflows to zero.
  double log_gamma(double shape) {
    if (shape >= 0.5) return std::log(gamma(shape, 1.0));
    const double boosted = gamma(shape + 1.0, 1.0);
    return std::log(boosted) + std::log(uniform()) / shape;
  }

  double beta(double a, double b) {
    const double la = log_gamma(a);
    const double lb = log_gamma(b);
    const double m = std::max(la, lb);
    return std::exp(la - m) / (std::exp(la - m) + std::exp(lb - m));
  }

  /// Index drawn proportionally to exp(log_weights).
  std::size_t categorical_log(std::span<const double> log_weights) {
    const double m = *std::max_element(log_weights.begin(), log_weights.end());
    double total = 0.0;
    for (double lw : log_weights) total += std::exp(lw - m);
    double u = uniform() * total;
    for (std::size_t k = 0; k < log_weights.size(); ++k) {
      u -= std::exp(log_weights[k] - m);
      if (u <= 0.0) return k;
    }
    return log_weights.size() - 1;
  }

  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      u -= weights[k];
      if (u <= 0.0 && weights[k] > 0.0) return k;
    }
    for (std::size_t k = weights.size(); k-- > 0;)
      if (weights[k] > 0.0) return k;
    return weights.size() - 1;
  }

  std::size_t index(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> std_normal_{0.0, 1.0};
};

}  // namespace sharedforest
