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
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sharedforest/error.hpp"
#include "sharedforest/math.hpp"
#include "sharedforest/rng.hpp"
#include "sharedforest/tree.hpp"

namespace sharedforest {

/// Branching-process prior: a node at depth d splits with probability
/// gamma * (1 + d)^(-zeta).
struct TreePriorParams {
  double gamma = 0.95;
  double zeta = 2.0;

  void check() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("tree prior: gamma must lie in (0,1)");
    if (!(zeta >= 0.0)) throw ConfigError("tree prior: zeta must be nonnegative");
  }
};

inline double branch_probability(int depth, const TreePriorParams& params) {
  return params.gamma * std::pow(1.0 + depth, -params.zeta);
}

/// Axis-selection probabilities s ~ Dirichlet(xi/P, ..., xi/P), held on the
/// log scale because sparse draws routinely underflow.
struct SplitProbabilities {
  std::vector<double> log_s;
  double xi = 1.0;

  SplitProbabilities() = default;
  SplitProbabilities(std::size_t num_axes, double xi_)
      : log_s(num_axes, -std::log(static_cast<double>(num_axes))), xi(xi_) {}

  static SplitProbabilities from_probabilities(std::span<const double> s, double xi) {
    SplitProbabilities out;
    out.xi = xi;
    out.log_s.reserve(s.size());
    for (double v : s) out.log_s.push_back(v > 0.0 ? std::log(v) : kMinLog);
    return out;
  }

  std::size_t size() const { return log_s.size(); }
  double prob(std::size_t axis) const { return std::exp(log_s[axis]); }
  std::vector<double> probabilities() const {
    std::vector<double> s(log_s.size());
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = std::exp(log_s[j]);
    return s;
  }

  static constexpr double kMinLog = -744.4400719213812;  // log of the smallest subnormal
};

/// Whether an open interval (lower, upper) contains a representable cutpoint.
inline bool has_room(double lower, double upper) {
  return std::nextafter(lower, upper) < upper;
}

/// Cutpoint strictly inside (lower, upper).
inline double draw_cutpoint(double lower, double upper, Rng& rng) {
  for (;;) {
    const double c = lower + (upper - lower) * rng.uniform();
    if (c > lower && c < upper) return c;
  }
}

/// Log prior mass of a tree, or nullopt if some branch has a degenerate or
/// violated cut interval (zero prior density).
inline std::optional<double> try_tree_log_prior(const DecisionTree& tree, const TreePriorParams& params,
                                                const SplitProbabilities& split_probs) {
  double lp = 0.0;
  const std::size_t num_axes = split_probs.size();
  for (std::size_t i = 0; i < tree.capacity(); ++i) {
    const auto id = static_cast<NodeId>(i);
    const TreeNode& n = tree.node(id);
    if (n.kind == NodeKind::Leaf) {
      lp += std::log1p(-branch_probability(n.depth, params));
    } else if (n.kind == NodeKind::Branch) {
      const Hyperrectangle box = tree.bounds(id, num_axes);
      const auto axis = static_cast<std::size_t>(n.rule.axis);
      const double lo = box.lower[axis];
      const double hi = box.upper[axis];
      if (!(hi > lo) || !(n.rule.cutpoint > lo && n.rule.cutpoint < hi)) return std::nullopt;
      lp += std::log(branch_probability(n.depth, params)) + split_probs.log_s[axis] - std::log(hi - lo);
    }
  }
  return lp;
}

inline double tree_log_prior(const DecisionTree& tree, const TreePriorParams& params,
                             const SplitProbabilities& split_probs) {
  const auto lp = try_tree_log_prior(tree, params, split_probs);
  if (!lp) throw InvalidTreeError("tree_log_prior: branch with a degenerate or violated cut interval");
  return *lp;
}

/// Axes whose interval at this cell still admits a cutpoint.
inline std::vector<std::size_t> available_axes(const Hyperrectangle& box) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < box.lower.size(); ++j)
    if (has_room(box.lower[j], box.upper[j])) out.push_back(j);
  return out;
}

/// Draws an axis from s restricted to `axes`; returns it with the log of its
/// renormalized selection probability.
inline std::pair<std::size_t, double> draw_axis(const SplitProbabilities& split_probs,
                                                std::span<const std::size_t> axes, Rng& rng) {
  std::vector<double> lw(axes.size());
  for (std::size_t k = 0; k < axes.size(); ++k) lw[k] = split_probs.log_s[axes[k]];
  const double norm = log_sum_exp(lw);
  const std::size_t k = rng.categorical_log(lw);
  return {axes[k], lw[k] - norm};
}

inline double axis_log_probability(const SplitProbabilities& split_probs, std::span<const std::size_t> axes,
                                   std::size_t axis) {
  std::vector<double> lw(axes.size());
  for (std::size_t k = 0; k < axes.size(); ++k) lw[k] = split_probs.log_s[axes[k]];
  return split_probs.log_s[axis] - log_sum_exp(lw);
}

inline DecisionTree sample_tree_from_prior(const TreePriorParams& params, const SplitProbabilities& split_probs,
                                           Rng& rng, std::size_t num_values = 1) {
  if (!(params.zeta > 0.0)) throw ConfigError("sample_tree_from_prior: zeta must be positive for termination");
  DecisionTree tree(num_values);
  std::deque<NodeId> frontier{DecisionTree::root()};
  const std::size_t num_axes = split_probs.size();
  while (!frontier.empty()) {
    const NodeId id = frontier.front();
    frontier.pop_front();
    if (rng.uniform() >= branch_probability(tree.node(id).depth, params)) continue;
    const Hyperrectangle box = tree.bounds(id, num_axes);
    const auto axes = available_axes(box);
    if (axes.empty()) continue;
    const auto [axis, log_p] = draw_axis(split_probs, axes, rng);
    (void)log_p;
    const double cut = draw_cutpoint(box.lower[axis], box.upper[axis], rng);
    const auto [l, r] = tree.split_leaf(id, SplitRule{static_cast<std::int32_t>(axis), cut});
    frontier.push_back(l);
    frontier.push_back(r);
  }
  return tree;
}

/// Number of branches splitting on each axis, summed over a forest.
inline std::vector<double> count_axis_usage(std::span<const DecisionTree> forest, std::size_t num_axes) {
  std::vector<double> counts(num_axes, 0.0);
  for (const DecisionTree& tree : forest)
    for (std::size_t i = 0; i < tree.capacity(); ++i)
      if (tree.node(static_cast<NodeId>(i)).kind == NodeKind::Branch)
        counts[static_cast<std::size_t>(tree.node(static_cast<NodeId>(i)).rule.axis)] += 1.0;
  return counts;
}

/// Conjugate draw s ~ Dirichlet(xi/P + c_1, ..., xi/P + c_P).
inline SplitProbabilities update_split_probabilities(std::span<const double> counts, double xi, Rng& rng) {
  const double base = xi / static_cast<double>(counts.size());
  SplitProbabilities out;
  out.xi = xi;
  out.log_s.resize(counts.size());
  for (std::size_t j = 0; j < counts.size(); ++j) out.log_s[j] = rng.log_gamma(base + counts[j]);
  const double norm = log_sum_exp(out.log_s);
  for (double& v : out.log_s) v -= norm;
  return out;
}

struct XiGridPoint {
  double xi;
  double log_weight;
};

/// Unnormalized log posterior of xi on a uniform grid of rho = xi/(xi+P),
/// with rho ~ Beta(0.5, 1) and s | xi ~ Dirichlet(xi/P, ...). Each cell is
/// represented by its midpoint and weighted by its prior mass.
inline std::vector<XiGridPoint> xi_grid_posterior(const SplitProbabilities& split_probs, std::size_t grid_size) {
  const auto p = static_cast<double>(split_probs.size());
  double sum_log_s = 0.0;
  for (double v : split_probs.log_s) sum_log_s += v;
  std::vector<XiGridPoint> grid(grid_size);
  for (std::size_t k = 0; k < grid_size; ++k) {
    const double rho = (static_cast<double>(k) + 0.5) / static_cast<double>(grid_size);
    const double xi = p * rho / (1.0 - rho);
    // Exact Beta(0.5, 1) mass of the cell; the density is singular at 0.
    const double g = static_cast<double>(grid_size);
    const double log_prior = std::log(std::sqrt((static_cast<double>(k) + 1.0) / g) - std::sqrt(static_cast<double>(k) / g));
    const double log_dirichlet = std::lgamma(xi) - p * std::lgamma(xi / p) + (xi / p - 1.0) * sum_log_s;
    grid[k] = {xi, log_prior + log_dirichlet};
  }
  return grid;
}

inline double update_xi(const SplitProbabilities& split_probs, Rng& rng, std::size_t grid_size = 1000) {
  const auto grid = xi_grid_posterior(split_probs, grid_size);
  std::vector<double> lw(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) lw[k] = grid[k].log_weight;
  return grid[rng.categorical_log(lw)].xi;
}

}  // namespace sharedforest
