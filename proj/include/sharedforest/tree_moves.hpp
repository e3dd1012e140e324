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
#include <string_view>
#include <vector>

#include "sharedforest/rng.hpp"
#include "sharedforest/tree.hpp"
#include "sharedforest/tree_prior.hpp"

namespace sharedforest {

enum class MoveKind { Grow, Prune, Change };

inline std::string_view to_string(MoveKind kind) {
  switch (kind) {
    case MoveKind::Grow: return "grow";
    case MoveKind::Prune: return "prune";
    case MoveKind::Change: return "change";
  }
  return "?";
}

/// Proposal mix for non-trivial trees. A single-leaf tree always grows.
struct MoveMix {
  double grow = 0.4;
  double prune = 0.4;
  double change = 0.2;
};

struct MoveWeights {
  double grow;
  double prune;
  double change;
};

inline MoveWeights move_weights(const DecisionTree& tree, const MoveMix& mix) {
  if (tree.is_single_leaf()) return {1.0, 0.0, 0.0};
  const double total = mix.grow + mix.prune + mix.change;
  return {mix.grow / total, mix.prune / total, mix.change / total};
}

struct MoveProposal {
  MoveKind kind = MoveKind::Grow;
  NodeId target = kNoNode;
  /// Rule introduced by grow/change; rule removed by prune.
  SplitRule rule;
  /// log q(reverse move) - log q(forward move).
  double log_proposal_ratio = 0.0;
  /// False when no admissible move exists at the drawn target.
  bool valid = true;
  /// Prune: the removed children's leaf values (left then right), so the
  /// reverse grow can restore them. Grow: values to give the new children.
  std::vector<double> child_values;
};

inline void apply_move(DecisionTree& tree, const MoveProposal& move) {
  switch (move.kind) {
    case MoveKind::Grow: {
      const auto [l, r] = tree.split_leaf(move.target, move.rule);
      const std::size_t s = tree.num_values();
      if (move.child_values.size() == 2 * s) {
        std::copy_n(move.child_values.begin(), s, tree.leaf_values(l).begin());
        std::copy_n(move.child_values.begin() + static_cast<std::ptrdiff_t>(s), s, tree.leaf_values(r).begin());
      }
      break;
    }
    case MoveKind::Prune: tree.collapse(move.target); break;
    case MoveKind::Change: tree.set_rule(move.target, move.rule); break;
  }
}

/// The move that undoes `move` once it has been applied to `before`.
inline MoveProposal reverse_move(const DecisionTree& before, const MoveProposal& move) {
  MoveProposal rev = move;
  rev.log_proposal_ratio = -move.log_proposal_ratio;
  switch (move.kind) {
    case MoveKind::Grow:
      rev.kind = MoveKind::Prune;
      rev.child_values.clear();
      break;
    case MoveKind::Prune: rev.kind = MoveKind::Grow; break;
    case MoveKind::Change: rev.rule = before.node(move.target).rule; break;
  }
  return rev;
}

inline MoveProposal propose_move(const DecisionTree& tree, const SplitProbabilities& split_probs, Rng& rng,
                                 const MoveMix& mix = {}) {
  const std::size_t num_axes = split_probs.size();
  const MoveWeights w = move_weights(tree, mix);
  MoveProposal move;
  const double u = rng.uniform();

  if (u < w.grow) {
    move.kind = MoveKind::Grow;
    const auto leaves = tree.leaves();
    move.target = leaves[rng.index(leaves.size())];
    const Hyperrectangle box = tree.bounds(move.target, num_axes);
    const auto axes = available_axes(box);
    if (axes.empty()) {
      move.valid = false;
      return move;
    }
    const auto [axis, log_p_axis] = draw_axis(split_probs, axes, rng);
    const double lo = box.lower[axis];
    const double hi = box.upper[axis];
    move.rule = SplitRule{static_cast<std::int32_t>(axis), draw_cutpoint(lo, hi, rng)};

    const TreeNode& n = tree.node(move.target);
    std::size_t prunable_after = tree.prunable().size() + 1;
    if (n.parent != kNoNode) {
      const TreeNode& p = tree.node(n.parent);
      const NodeId sibling = p.left == move.target ? p.right : p.left;
      if (tree.is_leaf(sibling)) --prunable_after;
    }
    const MoveWeights w_after{mix.grow, mix.prune, mix.change};
    const double total = w_after.grow + w_after.prune + w_after.change;
    const double log_forward = std::log(w.grow) - std::log(static_cast<double>(leaves.size())) + log_p_axis -
                               std::log(hi - lo);
    const double log_reverse = std::log(w_after.prune / total) - std::log(static_cast<double>(prunable_after));
    move.log_proposal_ratio = log_reverse - log_forward;
    return move;
  }

  if (u < w.grow + w.prune) {
    move.kind = MoveKind::Prune;
    const auto candidates = tree.prunable();
    move.target = candidates[rng.index(candidates.size())];
    move.rule = tree.node(move.target).rule;
    const auto lv = tree.leaf_values(tree.node(move.target).left);
    const auto rv = tree.leaf_values(tree.node(move.target).right);
    move.child_values.assign(lv.begin(), lv.end());
    move.child_values.insert(move.child_values.end(), rv.begin(), rv.end());
    const Hyperrectangle box = tree.bounds(move.target, num_axes);
    const auto axes = available_axes(box);
    const auto axis = static_cast<std::size_t>(move.rule.axis);
    const double leaves_after = static_cast<double>(tree.num_leaves() - 1);
    const bool single_after = tree.num_branches() == 1;
    const double grow_after = single_after ? 1.0 : mix.grow / (mix.grow + mix.prune + mix.change);
    const double log_forward = std::log(w.prune) - std::log(static_cast<double>(candidates.size()));
    const double log_reverse = std::log(grow_after) - std::log(leaves_after) +
                               axis_log_probability(split_probs, axes, axis) - std::log(box.width(axis));
    move.log_proposal_ratio = log_reverse - log_forward;
    return move;
  }

  move.kind = MoveKind::Change;
  const auto branches = tree.branches();
  move.target = branches[rng.index(branches.size())];
  const Hyperrectangle box = tree.bounds(move.target, num_axes);
  const auto axes = available_axes(box);
  const auto old_axis = static_cast<std::size_t>(tree.node(move.target).rule.axis);
  const auto [axis, log_p_axis] = draw_axis(split_probs, axes, rng);
  move.rule = SplitRule{static_cast<std::int32_t>(axis), draw_cutpoint(box.lower[axis], box.upper[axis], rng)};
  const double log_forward = log_p_axis - std::log(box.width(axis));
  const double log_reverse = axis_log_probability(split_probs, axes, old_axis) - std::log(box.width(old_axis));
  move.log_proposal_ratio = log_reverse - log_forward;
  return move;
}

inline bool metropolis_accept(double log_ratio, Rng& rng) {
  if (std::isnan(log_ratio)) return false;
  return log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
}

/// One Metropolis-Hastings structure update where `log_lik_delta(proposed,
/// move)` returns log L(proposed) - log L(current). Returns acceptance.
template <typename LogLikDelta>
bool mh_structure_step(DecisionTree& tree, const TreePriorParams& params, const SplitProbabilities& split_probs,
                       Rng& rng, const MoveMix& mix, LogLikDelta&& log_lik_delta) {
  const MoveProposal move = propose_move(tree, split_probs, rng, mix);
  if (!move.valid) return false;
  DecisionTree proposed = tree;
  apply_move(proposed, move);
  const auto lp_new = try_tree_log_prior(proposed, params, split_probs);
  if (!lp_new) return false;
  const double lp_old = tree_log_prior(tree, params, split_probs);
  const double log_ratio = *lp_new - lp_old + log_lik_delta(proposed, move) + move.log_proposal_ratio;
  if (!metropolis_accept(log_ratio, rng)) return false;
  tree = std::move(proposed);
  return true;
}

}  // namespace sharedforest
