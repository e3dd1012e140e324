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

// Backfitting MCMC for a forest whose tree structures are shared by several
// model components. Scan order per sweep: trees 0..T-1 (structure move, then
// a refresh of every component's leaf values), component globals, leaf-prior
// hyperparameters, split probabilities and xi, latent variables.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "sharedforest/components.hpp"
#include "sharedforest/error.hpp"
#include "sharedforest/rng.hpp"
#include "sharedforest/tree.hpp"
#include "sharedforest/tree_moves.hpp"
#include "sharedforest/tree_prior.hpp"

namespace sharedforest {

struct ForestConfig {
  std::size_t num_trees = 50;
  TreePriorParams tree_prior;
  MoveMix moves;
  bool sparse_splits = true;  // sample s from its Dirichlet full conditional
  bool update_xi = true;
  double xi = 1.0;            // initial / fixed concentration
  std::size_t xi_grid = 1000;
  bool structure_moves = true;

  void check() const {
    tree_prior.check();
    if (num_trees == 0) throw ConfigError("num_trees must be at least 1");
    if (!(xi > 0.0)) throw ConfigError("xi must be positive");
    if (xi_grid < 2) throw ConfigError("xi grid size must be at least 2");
    if (!(moves.grow > 0.0 && moves.prune > 0.0 && moves.change >= 0.0))
      throw ConfigError("move mix: grow and prune must be positive, change nonnegative");
  }
};

struct MoveCounts {
  std::array<std::size_t, 3> proposed{};
  std::array<std::size_t, 3> accepted{};

  void record(MoveKind kind, bool ok) {
    const auto k = static_cast<std::size_t>(kind);
    ++proposed[k];
    if (ok) ++accepted[k];
  }
  double rate(MoveKind kind) const {
    const auto k = static_cast<std::size_t>(kind);
    return proposed[k] ? static_cast<double>(accepted[k]) / static_cast<double>(proposed[k]) : 0.0;
  }
};

struct ForestSnapshot {
  std::size_t iteration = 0;
  std::vector<DecisionTree> trees;
  Globals globals;
  SplitProbabilities split_probs;
};

class SharedForestSampler {
 public:
  /// `x` is row-major n x P with entries in [0, 1].
  SharedForestSampler(std::vector<double> x, std::size_t num_axes,
                      std::vector<std::unique_ptr<LeafComponent>> components, ForestConfig config)
      : x_(std::move(x)), num_axes_(num_axes), components_(std::move(components)), config_(config) {
    config_.check();
    if (num_axes_ == 0) throw ConfigError("at least one predictor is required");
    if (x_.size() % num_axes_ != 0) throw DataError(DataErrorCode::RaggedRow, "predictor matrix is ragged");
    if (components_.empty()) throw ConfigError("at least one component is required");
    n_ = x_.size() / num_axes_;
    for (const auto& c : components_) {
      if (c->num_observations() != n_)
        throw ConfigError("component '" + std::string(c->family()) + "' sees a different number of rows");
      first_slot_.push_back(num_slots_);
      num_slots_ += c->num_slots();
    }
    trees_.assign(config_.num_trees, DecisionTree(num_slots_));
    leaf_of_.assign(config_.num_trees, std::vector<NodeId>(n_, DecisionTree::root()));
    fits_.assign(num_slots_, std::vector<double>(n_, 0.0));
    partial_.assign(num_slots_, std::vector<double>(n_, 0.0));
    split_probs_ = SplitProbabilities(num_axes_, config_.xi);
  }

  std::size_t num_observations() const { return n_; }
  std::size_t num_axes() const { return num_axes_; }
  std::size_t num_slots() const { return num_slots_; }
  std::size_t num_trees() const { return trees_.size(); }
  std::size_t first_slot(std::size_t component) const { return first_slot_[component]; }
  std::size_t iteration() const { return iteration_; }
  const ForestConfig& config() const { return config_; }

  std::span<const DecisionTree> trees() const { return trees_; }
  const SplitProbabilities& split_probabilities() const { return split_probs_; }
  const std::vector<std::vector<double>>& fits() const { return fits_; }
  const MoveCounts& move_counts() const { return counts_; }
  LeafComponent& component(std::size_t m) { return *components_[m]; }
  const LeafComponent& component(std::size_t m) const { return *components_[m]; }
  std::size_t num_components() const { return components_.size(); }
  std::span<const double> row(std::size_t i) const { return {x_.data() + i * num_axes_, num_axes_}; }

  Globals globals() const {
    Globals g;
    for (const auto& c : components_) c->export_globals(g);
    g.xi = split_probs_.xi;
    return g;
  }

  ForestSnapshot snapshot() const { return {iteration_, trees_, globals(), split_probs_}; }

  /// Replace the state (trees, globals, split probabilities) and rebuild fits.
  void restore(const ForestSnapshot& snap) {
    if (snap.trees.size() != trees_.size()) throw ConfigError("snapshot tree count mismatch");
    trees_ = snap.trees;
    split_probs_ = snap.split_probs;
    for (const auto& c : components_) c->import_globals(snap.globals);
    iteration_ = snap.iteration;
    recompute_fits();
  }

  void set_trees(std::vector<DecisionTree> trees) {
    if (trees.size() != trees_.size()) throw ConfigError("set_trees: tree count mismatch");
    trees_ = std::move(trees);
    recompute_fits();
  }

  void set_split_probabilities(SplitProbabilities s) { split_probs_ = std::move(s); }

  /// Recomputes leaf assignments and fits from the trees.
  void recompute_fits() {
    for (auto& f : fits_) std::fill(f.begin(), f.end(), 0.0);
    for (std::size_t t = 0; t < trees_.size(); ++t)
      for (std::size_t i = 0; i < n_; ++i) {
        const NodeId leaf = trees_[t].leaf_for(row(i));
        leaf_of_[t][i] = leaf;
        for (std::size_t s = 0; s < num_slots_; ++s) fits_[s][i] += trees_[t].value(leaf, s);
      }
  }

  /// Largest absolute difference between the maintained fits and a recomputation.
  double fit_drift() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t s = 0; s < num_slots_; ++s) {
        double f = 0.0;
        for (const DecisionTree& tree : trees_) f += tree.value(tree.leaf_for(row(i)), s);
        worst = std::max(worst, std::abs(f - fits_[s][i]));
      }
    return worst;
  }

  /// Draws the initial latent variables given the current fits.
  void initialize(Rng& rng) {
    for (std::size_t m = 0; m < components_.size(); ++m)
      components_[m]->update_latent(component_fits(fits_, m), rng);
    recompute_fits();
  }

  void sweep(Rng& rng) {
    for (std::size_t t = 0; t < trees_.size(); ++t) update_tree(t, rng);
    for (std::size_t m = 0; m < components_.size(); ++m) {
      components_[m]->update_globals(component_fits(fits_, m), rng);
      components_[m]->update_leaf_prior(trees_, first_slot_[m], rng);
    }
    if (config_.sparse_splits) {
      const auto counts = count_axis_usage(trees_, num_axes_);
      split_probs_ = update_split_probabilities(counts, split_probs_.xi, rng);
      if (config_.update_xi) split_probs_.xi = update_xi(split_probs_, rng, config_.xi_grid);
    }
    for (std::size_t m = 0; m < components_.size(); ++m)
      components_[m]->update_latent(component_fits(fits_, m), rng);
    ++iteration_;
  }

  /// log of prior(tree t) times the product over its leaves and components of
  /// the leaf marginals, with caches prepared for tree t.
  double shared_integrated_log_likelihood(std::size_t t) {
    remove_tree(t);
    const double ll = integrated_log_likelihood(trees_[t], leaf_of_[t]);
    add_tree(t);
    return ll;
  }

  /// Integrated likelihood of an arbitrary structure in place of tree t.
  double shared_integrated_log_likelihood(std::size_t t, const DecisionTree& candidate) {
    remove_tree(t);
    std::vector<NodeId> assign(n_);
    for (std::size_t i = 0; i < n_; ++i) assign[i] = candidate.leaf_for(row(i));
    const double ll = integrated_log_likelihood(candidate, assign);
    add_tree(t);
    return ll;
  }

  /// One structure update plus leaf refresh for tree t. Returns acceptance.
  bool update_tree(std::size_t t, Rng& rng) {
    remove_tree(t);
    bool accepted = false;
    if (config_.structure_moves) accepted = structure_move(t, rng);
    refresh_leaves(t, rng);
    add_tree(t);
    return accepted;
  }

 private:
  std::span<const std::vector<double>> component_fits(const std::vector<std::vector<double>>& table,
                                                      std::size_t m) const {
    return {table.data() + first_slot_[m], components_[m]->num_slots()};
  }

  void remove_tree(std::size_t t) {
    const DecisionTree& tree = trees_[t];
    for (std::size_t s = 0; s < num_slots_; ++s) {
      auto& p = partial_[s];
      const auto& f = fits_[s];
      for (std::size_t i = 0; i < n_; ++i) p[i] = f[i] - tree.value(leaf_of_[t][i], s);
    }
    for (std::size_t m = 0; m < components_.size(); ++m) components_[m]->prepare(component_fits(partial_, m));
  }

  void add_tree(std::size_t t) {
    const DecisionTree& tree = trees_[t];
    for (std::size_t s = 0; s < num_slots_; ++s) {
      auto& f = fits_[s];
      const auto& p = partial_[s];
      for (std::size_t i = 0; i < n_; ++i) f[i] = p[i] + tree.value(leaf_of_[t][i], s);
    }
  }

  double leaf_marginal(std::span<const std::size_t> obs) const {
    double ll = 0.0;
    for (const auto& c : components_) ll += c->leaf_log_marginal(obs);
    return ll;
  }

  /// Groups observation indices by leaf id.
  static std::unordered_map<NodeId, std::vector<std::size_t>> group(std::span<const std::size_t> obs,
                                                                    std::span<const NodeId> assign) {
    std::unordered_map<NodeId, std::vector<std::size_t>> groups;
    for (std::size_t i : obs) groups[assign[i]].push_back(i);
    return groups;
  }

  double integrated_log_likelihood(const DecisionTree& tree, std::span<const NodeId> assign) const {
    const auto lp = try_tree_log_prior(tree, config_.tree_prior, split_probs_);
    if (!lp) return kNegInf;
    std::vector<std::vector<std::size_t>> by_leaf(tree.capacity());
    for (std::size_t i = 0; i < n_; ++i) by_leaf[static_cast<std::size_t>(assign[i])].push_back(i);
    double ll = *lp;
    for (NodeId id : tree.leaves()) ll += leaf_marginal(by_leaf[static_cast<std::size_t>(id)]);
    return ll;
  }

  bool structure_move(std::size_t t, Rng& rng) {
    DecisionTree& tree = trees_[t];
    const MoveProposal move = propose_move(tree, split_probs_, rng, config_.moves);
    if (!move.valid) {
      counts_.record(move.kind, false);
      return false;
    }
    DecisionTree proposed = tree;
    apply_move(proposed, move);
    const auto lp_new = try_tree_log_prior(proposed, config_.tree_prior, split_probs_);
    if (!lp_new) {
      counts_.record(move.kind, false);
      return false;
    }
    const double lp_old = tree_log_prior(tree, config_.tree_prior, split_probs_);

    // Only observations routed below the target node change leaves.
    std::vector<std::size_t> affected;
    std::vector<NodeId>& assign = leaf_of_[t];
    for (std::size_t i = 0; i < n_; ++i)
      if (tree.is_descendant(assign[i], move.target)) affected.push_back(i);
    std::vector<NodeId> new_assign(assign);
    for (std::size_t i : affected) new_assign[i] = proposed.leaf_for(row(i));

    double delta = 0.0;
    for (const auto& [leaf, obs] : sorted_groups(affected, new_assign)) delta += leaf_marginal(obs);
    for (const auto& [leaf, obs] : sorted_groups(affected, assign)) delta -= leaf_marginal(obs);
    // Leaves with no data contribute zero, so only non-empty groups matter.

    const double log_ratio = *lp_new - lp_old + delta + move.log_proposal_ratio;
    const bool ok = metropolis_accept(log_ratio, rng);
    counts_.record(move.kind, ok);
    if (ok) {
      tree = std::move(proposed);
      for (std::size_t i : affected) assign[i] = new_assign[i];
    }
    return ok;
  }

  /// Groups in ascending leaf order so floating-point sums are reproducible.
  static std::vector<std::pair<NodeId, std::vector<std::size_t>>> sorted_groups(std::span<const std::size_t> obs,
                                                                                std::span<const NodeId> assign) {
    auto g = group(obs, assign);
    std::vector<std::pair<NodeId, std::vector<std::size_t>>> out(g.begin(), g.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  void refresh_leaves(std::size_t t, Rng& rng) {
    DecisionTree& tree = trees_[t];
    std::vector<std::vector<std::size_t>> by_leaf(tree.capacity());
    for (std::size_t i = 0; i < n_; ++i) by_leaf[static_cast<std::size_t>(leaf_of_[t][i])].push_back(i);
    for (NodeId id : tree.leaves()) {
      auto values = tree.leaf_values(id);
      for (std::size_t m = 0; m < components_.size(); ++m)
        components_[m]->draw_leaf(by_leaf[static_cast<std::size_t>(id)], rng,
                                  values.subspan(first_slot_[m], components_[m]->num_slots()));
    }
  }

  std::vector<double> x_;
  std::size_t num_axes_;
  std::size_t n_ = 0;
  std::vector<std::unique_ptr<LeafComponent>> components_;
  ForestConfig config_;
  std::vector<std::size_t> first_slot_;
  std::size_t num_slots_ = 0;

  std::vector<DecisionTree> trees_;
  std::vector<std::vector<NodeId>> leaf_of_;
  std::vector<std::vector<double>> fits_;
  std::vector<std::vector<double>> partial_;
  SplitProbabilities split_probs_;
  MoveCounts counts_;
  std::size_t iteration_ = 0;
};

}  // namespace sharedforest
