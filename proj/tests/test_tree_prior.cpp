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

#include <gtest/gtest.h>

#include <random>

#include "sharedforest/tree_moves.hpp"
#include "sharedforest/tree_prior.hpp"
#include "test_support.hpp"

using namespace sharedforest;
namespace ts = testing_support;

namespace {

constexpr double kAlpha = 1e-3;

// Literal recursion over the tree from the root.
double log_prior_oracle(const DecisionTree& tree, NodeId id, const TreePriorParams& params,
                        const std::vector<double>& s, std::vector<double> lo, std::vector<double> hi) {
  const TreeNode& n = tree.node(id);
  const double q = params.gamma / std::pow(1.0 + n.depth, params.zeta);
  if (n.kind == NodeKind::Leaf) return std::log(1.0 - q);
  const auto j = static_cast<std::size_t>(n.rule.axis);
  double lp = std::log(q) + std::log(s[j]) - std::log(hi[j] - lo[j]);
  auto hi_left = hi;
  hi_left[j] = n.rule.cutpoint;
  auto lo_right = lo;
  lo_right[j] = n.rule.cutpoint;
  lp += log_prior_oracle(tree, n.left, params, s, lo, hi_left);
  lp += log_prior_oracle(tree, n.right, params, s, lo_right, hi);
  return lp;
}

// Independent branching-process simulator: number of leaves.
long simulate_size(int depth, const TreePriorParams& params, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(gen) >= params.gamma * std::pow(1.0 + depth, -params.zeta)) return 1;
  return simulate_size(depth + 1, params, gen) + simulate_size(depth + 1, params, gen);
}

}  // namespace

TEST(BranchProbability, Values) {
  TreePriorParams params;
  EXPECT_DOUBLE_EQ(branch_probability(0, params), 0.95);
  EXPECT_DOUBLE_EQ(branch_probability(1, params), 0.2375);
  TreePriorParams gw{0.8, 0.0};
  for (int d = 0; d < 6; ++d) EXPECT_DOUBLE_EQ(branch_probability(d, gw), 0.8);
}

TEST(TreePriorParams, Check) {
  EXPECT_THROW((TreePriorParams{1.0, 2.0}.check()), ConfigError);
  EXPECT_THROW((TreePriorParams{0.5, -1.0}.check()), ConfigError);
  EXPECT_NO_THROW(TreePriorParams{}.check());
}

TEST(TreeLogPrior, SingleLeaf) {
  TreePriorParams params;
  EXPECT_DOUBLE_EQ(tree_log_prior(DecisionTree(), params, SplitProbabilities(3, 1.0)), std::log(0.05));
}

TEST(TreeLogPrior, RootSplitOnly) {
  TreePriorParams params;
  DecisionTree tree;
  tree.split_leaf(0, SplitRule{0, 0.77});
  const double expected = std::log(0.95) + 2.0 * std::log(1.0 - 0.2375);
  EXPECT_NEAR(tree_log_prior(tree, params, SplitProbabilities(1, 1.0)), expected, 1e-14);
}

TEST(TreeLogPrior, DegenerateIntervalThrows) {
  DecisionTree tree;
  const auto [l, r] = tree.split_leaf(0, SplitRule{0, 0.3});
  (void)r;
  tree.split_leaf(l, SplitRule{0, 0.5});
  EXPECT_THROW(tree_log_prior(tree, TreePriorParams{}, SplitProbabilities(1, 1.0)), InvalidTreeError);
}

TEST(TreeLogPrior, MatchesRecursionOracle) {
  Rng rng(41);
  const std::vector<double> s{0.5, 0.3, 0.15, 0.05};
  const auto split = SplitProbabilities::from_probabilities(s, 1.0);
  TreePriorParams params{0.95, 1.0};
  for (int rep = 0; rep < 200; ++rep) {
    const DecisionTree tree = sample_tree_from_prior(params, split, rng);
    const double lp = tree_log_prior(tree, params, split);
    ASSERT_TRUE(std::isfinite(lp));
    const double oracle = log_prior_oracle(tree, 0, params, s, std::vector<double>(4, 0.0), std::vector<double>(4, 1.0));
    EXPECT_NEAR(lp, oracle, 1e-12 * (1.0 + std::abs(oracle)));
  }
}

TEST(SampleTree, TinyGammaGivesSingleLeaf) {
  Rng rng(1);
  TreePriorParams params{1e-12, 2.0};
  for (int k = 0; k < 1000; ++k) EXPECT_TRUE(sample_tree_from_prior(params, SplitProbabilities(3, 1.0), rng).is_single_leaf());
}

TEST(SampleTree, ZetaZeroRejected) {
  Rng rng(1);
  EXPECT_THROW(sample_tree_from_prior(TreePriorParams{0.5, 0.0}, SplitProbabilities(2, 1.0), rng), ConfigError);
}

TEST(SampleTree, RootLeafFraction) {
  Rng rng(2);
  TreePriorParams params;
  const int n = 100000;
  int single = 0;
  for (int k = 0; k < n; ++k) single += sample_tree_from_prior(params, SplitProbabilities(5, 1.0), rng).is_single_leaf();
  const double frac = single / static_cast<double>(n);
  EXPECT_NEAR(frac, 0.05, 3.0 * std::sqrt(0.05 * 0.95 / n));
}

TEST(SampleTree, SizeHistogramMatchesBranchingProcess) {
  Rng rng(3);
  std::mt19937_64 gen(4);
  TreePriorParams params;
  std::map<long, double> ours, oracle;
  for (int k = 0; k < 100000; ++k) {
    ours[static_cast<long>(sample_tree_from_prior(params, SplitProbabilities(5, 1.0), rng).num_leaves())] += 1;
    oracle[simulate_size(0, params, gen)] += 1;
  }
  EXPECT_GT(ts::two_sample_chi_square(ours, oracle), kAlpha);
}

TEST(ProposeMove, SingleLeafAlwaysGrows) {
  Rng rng(5);
  DecisionTree tree;
  for (int k = 0; k < 500; ++k) EXPECT_EQ(propose_move(tree, SplitProbabilities(3, 1.0), rng).kind, MoveKind::Grow);
}

TEST(ProposeMove, GrowThenPruneRatiosCancel) {
  Rng rng(6);
  const auto split = SplitProbabilities::from_probabilities(std::vector<double>{0.6, 0.3, 0.1}, 1.0);
  TreePriorParams params;
  int checked = 0;
  for (int rep = 0; rep < 300; ++rep) {
    const DecisionTree tree = sample_tree_from_prior(params, split, rng);
    const MoveProposal grow = propose_move(tree, split, rng);
    if (grow.kind != MoveKind::Grow || !grow.valid) continue;
    DecisionTree grown = tree;
    apply_move(grown, grow);
    // Probability that propose_move on `grown` picks exactly the reverse prune.
    const auto prunable = grown.prunable();
    const double w_prune = 0.4;
    const double log_q_rev = std::log(w_prune) - std::log(static_cast<double>(prunable.size()));
    const Hyperrectangle box = tree.bounds(grow.target, 3);
    const auto axes = available_axes(box);
    const auto axis = static_cast<std::size_t>(grow.rule.axis);
    const double w_grow = tree.is_single_leaf() ? 1.0 : 0.4;
    const double log_q_fwd = std::log(w_grow) - std::log(static_cast<double>(tree.num_leaves())) +
                             axis_log_probability(split, axes, axis) - std::log(box.width(axis));
    EXPECT_NEAR(grow.log_proposal_ratio, log_q_rev - log_q_fwd, 1e-12);
    // The reverse prune has the negated ratio.
    const MoveProposal rev = reverse_move(tree, grow);
    EXPECT_EQ(rev.kind, MoveKind::Prune);
    EXPECT_DOUBLE_EQ(rev.log_proposal_ratio, -grow.log_proposal_ratio);
    // A fresh prune proposal on `grown` at the same target reports the same ratio.
    Rng probe(1000 + static_cast<std::uint64_t>(rep));
    for (int tries = 0; tries < 500; ++tries) {
      const MoveProposal p = propose_move(grown, split, probe);
      if (p.kind == MoveKind::Prune && p.target == grow.target) {
        EXPECT_NEAR(p.log_proposal_ratio, -grow.log_proposal_ratio, 1e-12);
        ++checked;
        break;
      }
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(ProposeMove, ApplyThenReverseIsBitExact) {
  Rng rng(7);
  const auto split = SplitProbabilities::from_probabilities(std::vector<double>{0.25, 0.25, 0.5}, 1.0);
  TreePriorParams params{0.95, 1.0};
  int counts[3] = {0, 0, 0};
  for (int rep = 0; rep < 3000; ++rep) {
    DecisionTree tree = sample_tree_from_prior(params, split, rng, 2);
    for (NodeId leaf : tree.leaves())
      for (double& v : tree.leaf_values(leaf)) v = rng.normal();
    const MoveProposal move = propose_move(tree, split, rng);
    if (!move.valid) continue;
    DecisionTree work = tree;
    apply_move(work, move);
    const MoveProposal rev = reverse_move(tree, move);
    apply_move(work, rev);
    EXPECT_EQ(work, tree) << to_string(move.kind);
    ++counts[static_cast<int>(move.kind)];
  }
  for (int c : counts) EXPECT_GT(c, 100);
}

// Unit likelihood: the MH kernel must leave the tree prior invariant. Many
// chains start at exact prior draws; after a run of sweeps their end states
// must still be prior draws.
TEST(ProposeMove, PriorInvariance) {
  Rng rng(8);
  const std::size_t p = 3;
  const auto split = SplitProbabilities::from_probabilities(std::vector<double>{0.6, 0.3, 0.1}, 1.0);
  TreePriorParams params;
  const int chains = 10000, steps = 10;
  std::map<long, double> size_mh, size_prior, depth_mh, depth_prior, axis_mh, axis_prior;
  int accepted = 0;
  for (int c = 0; c < chains; ++c) {
    DecisionTree tree = sample_tree_from_prior(params, split, rng);
    for (int s = 0; s < steps; ++s)
      accepted += mh_structure_step(tree, params, split, rng, MoveMix{},
                                    [](const DecisionTree&, const MoveProposal&) { return 0.0; });
    ASSERT_TRUE(tree.is_valid(p));
    const DecisionTree fresh = sample_tree_from_prior(params, split, rng);
    size_mh[static_cast<long>(tree.num_leaves())] += 1;
    size_prior[static_cast<long>(fresh.num_leaves())] += 1;
    depth_mh[tree.max_depth()] += 1;
    depth_prior[fresh.max_depth()] += 1;
    const auto u_mh = count_axis_usage(std::span(&tree, 1), p);
    const auto u_pr = count_axis_usage(std::span(&fresh, 1), p);
    axis_mh[static_cast<long>(u_mh[0])] += 1;
    axis_prior[static_cast<long>(u_pr[0])] += 1;
  }
  EXPECT_GT(accepted, chains * steps / 10);
  EXPECT_GT(ts::two_sample_chi_square(size_mh, size_prior), kAlpha);
  EXPECT_GT(ts::two_sample_chi_square(depth_mh, depth_prior), kAlpha);
  EXPECT_GT(ts::two_sample_chi_square(axis_mh, axis_prior), kAlpha);
}

// Same check along one long chain, thinned, against independent draws.
TEST(ProposeMove, LongChainSizeDistribution) {
  Rng rng(9);
  const auto split = SplitProbabilities(4, 1.0);
  TreePriorParams params{0.95, 2.0};
  DecisionTree tree = sample_tree_from_prior(params, split, rng);
  std::map<long, double> mh, prior;
  const int iters = 100000, thin = 25;
  for (int it = 0; it < iters; ++it) {
    mh_structure_step(tree, params, split, rng, MoveMix{}, [](const DecisionTree&, const MoveProposal&) { return 0.0; });
    if (it % thin == 0) mh[static_cast<long>(tree.num_leaves())] += 1;
  }
  for (int k = 0; k < iters / thin; ++k)
    prior[static_cast<long>(sample_tree_from_prior(params, split, rng).num_leaves())] += 1;
  EXPECT_GT(ts::two_sample_chi_square(mh, prior), kAlpha);
}

TEST(SplitProbabilities, ZeroCountsGivePriorMoments) {
  Rng rng(10);
  const std::vector<double> counts(4, 0.0);
  const double xi = 2.0;
  std::vector<double> draws;
  for (int k = 0; k < 100000; ++k) draws.push_back(update_split_probabilities(counts, xi, rng).prob(0));
  const auto m = ts::moments(draws);
  // Dirichlet(0.5,...,0.5) with P=4: mean 1/4, variance a(A-a)/(A^2(A+1)).
  const double a = 0.5, a0 = 2.0;
  EXPECT_NEAR(m.mean, 0.25, 3.0 * m.se);
  const double var = a * (a0 - a) / (a0 * a0 * (a0 + 1.0));
  EXPECT_NEAR(m.variance, var, 0.02 * var);
}

TEST(SplitProbabilities, PosteriorMean) {
  Rng rng(11);
  const std::vector<double> counts{10.0, 0.0};
  std::vector<double> s1, s1sq;
  for (int k = 0; k < 100000; ++k) {
    const double v = update_split_probabilities(counts, 2.0, rng).prob(0);
    s1.push_back(v);
    s1sq.push_back(v * v);
  }
  // Dirichlet(11, 1): mean 11/12, second moment 11*12/(12*13).
  const auto m = ts::moments(s1);
  EXPECT_NEAR(m.mean, 11.0 / 12.0, 3.0 * m.se);
  const auto m2 = ts::moments(s1sq);
  EXPECT_NEAR(m2.mean, 11.0 * 12.0 / (12.0 * 13.0), 3.0 * m2.se);
}

TEST(SplitProbabilities, SimplexAndSparseDraws) {
  Rng rng(12);
  const std::vector<double> counts(50, 0.0);
  for (int k = 0; k < 200; ++k) {
    const auto s = update_split_probabilities(counts, 0.05, rng);
    double total = 0.0;
    for (double v : s.probabilities()) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    for (double v : s.log_s) EXPECT_TRUE(std::isfinite(v));
  }
}

// Draw an axis from s, update s given that single choice, draw again: the
// repeat probability must equal the Polya urn value (xi/P + 1)/(xi + 1).
TEST(SplitProbabilities, PolyaUrnConsistency) {
  Rng rng(13);
  const std::size_t p = 3;
  const double xi = 1.5;
  const int n = 100000;
  int repeat = 0;
  std::vector<double> first(p, 0.0);
  for (int k = 0; k < n; ++k) {
    const auto s = update_split_probabilities(std::vector<double>(p, 0.0), xi, rng);
    const auto w = s.probabilities();
    const std::size_t a1 = rng.categorical(w);
    std::vector<double> c(p, 0.0);
    c[a1] = 1.0;
    const auto post = update_split_probabilities(c, xi, rng);
    const std::size_t a2 = rng.categorical(post.probabilities());
    repeat += a1 == a2;
    first[a1] += 1.0;
  }
  const double expect = (xi / p + 1.0) / (xi + 1.0);
  EXPECT_NEAR(repeat / static_cast<double>(n), expect, 3.0 * std::sqrt(expect * (1 - expect) / n));
  EXPECT_GT(ts::chi_square_gof(first, std::vector<double>(p, 1.0 / p)), kAlpha);
}

TEST(UpdateXi, SingleAxisFollowsBetaPrior) {
  Rng rng(14);
  const SplitProbabilities s(1, 1.0);
  std::vector<double> counts(10, 0.0);
  for (int k = 0; k < 100000; ++k) {
    const double xi = update_xi(s, rng);
    const double rho = xi / (xi + 1.0);
    counts[std::min<std::size_t>(9, static_cast<std::size_t>(rho * 10.0))] += 1.0;
  }
  std::vector<double> probs(10);
  for (int b = 0; b < 10; ++b) probs[b] = std::sqrt((b + 1) / 10.0) - std::sqrt(b / 10.0);
  EXPECT_GT(ts::chi_square_gof(counts, probs), kAlpha);
}

namespace {

// Posterior mean of xi by a 10^5-point midpoint rule on rho = xi/(xi+P).
double xi_posterior_mean_oracle(const std::vector<double>& s) {
  const double p = static_cast<double>(s.size());
  const int n = 100000;
  std::vector<double> lw(n), xs(n);
  double mx = -1e300;
  for (int k = 0; k < n; ++k) {
    const double rho = (k + 0.5) / n;
    const double xi = p * rho / (1.0 - rho);
    double ld = std::lgamma(xi) - p * std::lgamma(xi / p);
    for (double v : s) ld += (xi / p - 1.0) * std::log(v);
    lw[k] = ld + std::log(0.5) - 0.5 * std::log(rho);
    xs[k] = xi;
    mx = std::max(mx, lw[k]);
  }
  double num = 0.0, den = 0.0;
  for (int k = 0; k < n; ++k) {
    const double w = std::exp(lw[k] - mx);
    num += w * xs[k];
    den += w;
  }
  return num / den;
}

double grid_mean(const SplitProbabilities& s) {
  const auto grid = xi_grid_posterior(s, 1000);
  std::vector<double> lw;
  for (const auto& g : grid) lw.push_back(g.log_weight);
  const double norm = log_sum_exp(lw);
  double mean = 0.0;
  for (const auto& g : grid) mean += std::exp(g.log_weight - norm) * g.xi;
  return mean;
}

std::vector<double> concentrated_s() {
  // Near-vertex point; exact zeros would put all posterior mass at xi -> 0.
  std::vector<double> s(10, 1e-10);
  s[0] = 0.99 - 8e-10;
  s[1] = 0.01;
  return s;
}

}  // namespace

TEST(UpdateXi, ConcentratedSplitsFavorSmallXi) {
  const auto s = SplitProbabilities::from_probabilities(concentrated_s(), 1.0);
  const auto grid = xi_grid_posterior(s, 1000);
  std::vector<double> lw;
  for (const auto& g : grid) lw.push_back(g.log_weight);
  const double norm = log_sum_exp(lw);
  double mean_rho = 0.0;
  for (const auto& g : grid) mean_rho += std::exp(g.log_weight - norm) * g.xi / (g.xi + 10.0);
  // Prior mean of rho under Beta(0.5, 1) is 1/3.
  EXPECT_LT(mean_rho, 1.0 / 3.0);
  EXPECT_LT(mean_rho, 0.05);
  Rng rng(15);
  double draws = 0.0;
  for (int k = 0; k < 5000; ++k) draws += update_xi(s, rng);
  EXPECT_LT(draws / 5000.0, 1.0);
}

TEST(UpdateXi, GridMeanMatchesQuadrature) {
  Rng rng(16);
  std::vector<std::vector<double>> cases{concentrated_s(), {0.2, 0.3, 0.5}, {0.1, 0.1, 0.1, 0.1, 0.6}};
  // A moderately spread draw from Dirichlet(1,...,1) with P=20.
  const auto spread = update_split_probabilities(std::vector<double>(20, 0.0), 20.0, rng).probabilities();
  cases.push_back(spread);
  for (const auto& s : cases) {
    const double oracle = xi_posterior_mean_oracle(s);
    EXPECT_NEAR(grid_mean(SplitProbabilities::from_probabilities(s, 1.0)), oracle, 0.01 * oracle);
  }
}
