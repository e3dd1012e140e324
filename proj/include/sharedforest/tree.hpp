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
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sharedforest/error.hpp"

namespace sharedforest {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

/// Decision rule [x_axis <= cutpoint]; axis is zero-based.
struct SplitRule {
  std::int32_t axis = -1;
  double cutpoint = 0.0;

  friend bool operator==(const SplitRule&, const SplitRule&) = default;
};

/// Cell of the predictor space reaching a node: (lower_j, upper_j] per axis.
struct Hyperrectangle {
  std::vector<double> lower;
  std::vector<double> upper;

  explicit Hyperrectangle(std::size_t num_axes = 0)
      : lower(num_axes, 0.0), upper(num_axes, 1.0) {}

  double width(std::size_t axis) const { return upper[axis] - lower[axis]; }

  bool contains(std::span<const double> x) const {
    for (std::size_t j = 0; j < lower.size(); ++j) {
      // Left cells are closed on the right; the root cell includes 0.
      if (x[j] > upper[j]) return false;
      if (lower[j] > 0.0 ? x[j] <= lower[j] : x[j] < lower[j]) return false;
    }
    return true;
  }
};

enum class NodeKind : std::uint8_t { Leaf, Branch, Free };

struct TreeNode {
  NodeKind kind = NodeKind::Leaf;
  NodeId parent = kNoNode;
  NodeId left = kNoNode;
  NodeId right = kNoNode;
  std::int32_t depth = 0;
  SplitRule rule;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Binary decision tree stored in a flat arena. Node ids double as stable
/// leaf ids: growing a leaf allocates two ids, pruning retires them, and
/// retired ids are reused last-in first-out so a move followed by its reverse
/// restores every live node and id exactly. Each leaf carries `num_values`
/// parameters, one per model slot sharing this topology.
class DecisionTree {
 public:
  DecisionTree() : DecisionTree(1) {}

  explicit DecisionTree(std::size_t num_values)
      : num_values_(num_values), nodes_(1), values_(num_values, 0.0) {}

  std::size_t num_values() const { return num_values_; }
  static constexpr NodeId root() { return 0; }

  /// Arena size including retired slots.
  std::size_t capacity() const { return nodes_.size(); }
  const TreeNode& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool is_leaf(NodeId id) const { return node(id).kind == NodeKind::Leaf; }
  bool is_branch(NodeId id) const { return node(id).kind == NodeKind::Branch; }
  bool is_live(NodeId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < nodes_.size() &&
           node(id).kind != NodeKind::Free;
  }
  const std::vector<NodeId>& free_ids() const { return free_; }

  std::span<const double> leaf_values(NodeId id) const {
    return {values_.data() + static_cast<std::size_t>(id) * num_values_, num_values_};
  }
  std::span<double> leaf_values(NodeId id) {
    return {values_.data() + static_cast<std::size_t>(id) * num_values_, num_values_};
  }
  double value(NodeId id, std::size_t slot) const {
    return values_[static_cast<std::size_t>(id) * num_values_ + slot];
  }

  /// Routes x to its leaf; ties at a cutpoint go left.
  NodeId leaf_for(std::span<const double> x) const {
    NodeId id = root();
    const TreeNode* n = &nodes_[0];
    while (n->kind == NodeKind::Branch) {
      id = x[static_cast<std::size_t>(n->rule.axis)] <= n->rule.cutpoint ? n->left : n->right;
      n = &nodes_[static_cast<std::size_t>(id)];
    }
    return id;
  }

  std::vector<NodeId> leaves() const { return collect(NodeKind::Leaf); }
  std::vector<NodeId> branches() const { return collect(NodeKind::Branch); }

  /// Branches whose two children are both leaves (prune candidates).
  std::vector<NodeId> prunable() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const TreeNode& n = nodes_[i];
      if (n.kind == NodeKind::Branch && is_leaf(n.left) && is_leaf(n.right))
        out.push_back(static_cast<NodeId>(i));
    }
    return out;
  }

  std::size_t num_leaves() const { return count(NodeKind::Leaf); }
  std::size_t num_branches() const { return count(NodeKind::Branch); }
  bool is_single_leaf() const { return nodes_[0].kind == NodeKind::Leaf; }

  int max_depth() const {
    int d = 0;
    for (const TreeNode& n : nodes_)
      if (n.kind == NodeKind::Leaf) d = std::max(d, n.depth);
    return d;
  }

  bool is_descendant(NodeId id, NodeId ancestor) const {
    while (id != kNoNode) {
      if (id == ancestor) return true;
      id = node(id).parent;
    }
    return false;
  }

  /// Intersection of the ancestor half-spaces of `id` with [0,1]^P.
  Hyperrectangle bounds(NodeId id, std::size_t num_axes) const {
    Hyperrectangle box(num_axes);
    NodeId child = id;
    NodeId parent = node(id).parent;
    while (parent != kNoNode) {
      const TreeNode& p = node(parent);
      const auto axis = static_cast<std::size_t>(p.rule.axis);
      if (p.left == child) box.upper[axis] = std::min(box.upper[axis], p.rule.cutpoint);
      else box.lower[axis] = std::max(box.lower[axis], p.rule.cutpoint);
      child = parent;
      parent = p.parent;
    }
    return box;
  }

  /// Turns a leaf into a branch; children inherit the leaf's values.
  std::pair<NodeId, NodeId> split_leaf(NodeId leaf, SplitRule rule) {
    if (!is_leaf(leaf)) throw InvalidTreeError("split_leaf: node is not a leaf");
    const NodeId l = allocate();
    const NodeId r = allocate();
    TreeNode& n = nodes_[static_cast<std::size_t>(leaf)];
    n.kind = NodeKind::Branch;
    n.rule = rule;
    n.left = l;
    n.right = r;
    for (NodeId c : {l, r}) {
      TreeNode& cn = nodes_[static_cast<std::size_t>(c)];
      cn = TreeNode{};
      cn.parent = leaf;
      cn.depth = n.depth + 1;
      std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(leaf) * static_cast<std::ptrdiff_t>(num_values_),
                  num_values_,
                  values_.begin() + static_cast<std::ptrdiff_t>(c) * static_cast<std::ptrdiff_t>(num_values_));
    }
    return {l, r};
  }

  /// Collapses a branch with two leaf children back into a leaf.
  void collapse(NodeId branch) {
    const TreeNode n = node(branch);
    if (n.kind != NodeKind::Branch || !is_leaf(n.left) || !is_leaf(n.right))
      throw InvalidTreeError("collapse: node is not a branch with two leaf children");
    TreeNode& b = nodes_[static_cast<std::size_t>(branch)];
    b.kind = NodeKind::Leaf;
    b.left = b.right = kNoNode;
    b.rule = SplitRule{};
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(n.left) * static_cast<std::ptrdiff_t>(num_values_),
                num_values_,
                values_.begin() + static_cast<std::ptrdiff_t>(branch) * static_cast<std::ptrdiff_t>(num_values_));
    release(n.right);
    release(n.left);
  }

  void set_rule(NodeId branch, SplitRule rule) {
    if (!is_branch(branch)) throw InvalidTreeError("set_rule: node is not a branch");
    nodes_[static_cast<std::size_t>(branch)].rule = rule;
  }

  /// Empty string when the tree satisfies every structural invariant,
  /// otherwise a description of the first violation found.
  std::string validate(std::size_t num_axes) const {
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<NodeId> stack{root()};
    if (nodes_.empty() || nodes_[0].kind == NodeKind::Free || nodes_[0].parent != kNoNode ||
        nodes_[0].depth != 0)
      return "bad root";
    while (!stack.empty()) {
      const NodeId id = stack.back();
      stack.pop_back();
      if (!is_live(id)) return "dangling child " + std::to_string(id);
      if (seen[static_cast<std::size_t>(id)]) return "node reached twice " + std::to_string(id);
      seen[static_cast<std::size_t>(id)] = 1;
      const TreeNode& n = node(id);
      if (n.kind == NodeKind::Branch) {
        if (n.rule.axis < 0 || static_cast<std::size_t>(n.rule.axis) >= num_axes)
          return "axis out of range at node " + std::to_string(id);
        const Hyperrectangle box = bounds(id, num_axes);
        const auto axis = static_cast<std::size_t>(n.rule.axis);
        if (!(n.rule.cutpoint > box.lower[axis] && n.rule.cutpoint < box.upper[axis]))
          return "cutpoint outside its cell at node " + std::to_string(id);
        for (NodeId c : {n.left, n.right}) {
          if (!is_live(c)) return "missing child at node " + std::to_string(id);
          if (node(c).parent != id || node(c).depth != n.depth + 1)
            return "inconsistent child at node " + std::to_string(c);
          stack.push_back(c);
        }
      }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].kind != NodeKind::Free && !seen[i]) return "unreachable node " + std::to_string(i);
    return {};
  }

  bool is_valid(std::size_t num_axes) const { return validate(num_axes).empty(); }

  /// Restores a tree from raw arena contents (used by deserialization).
  static DecisionTree from_arena(std::size_t num_values, std::vector<TreeNode> nodes,
                                 std::vector<NodeId> free_ids, std::vector<double> values) {
    DecisionTree t(num_values);
    t.nodes_ = std::move(nodes);
    t.free_ = std::move(free_ids);
    t.values_ = std::move(values);
    if (t.nodes_.empty() || t.values_.size() != t.nodes_.size() * num_values)
      throw InvalidTreeError("from_arena: arena and value table sizes disagree");
    return t;
  }

  /// Equality over live nodes: same ids, node records and leaf values
  /// (bitwise). Retired arena slots are bookkeeping and do not participate.
  friend bool operator==(const DecisionTree& a, const DecisionTree& b) {
    return a.same_structure(b) && a.same_values(b);
  }

  /// Equality of live topology and rules, ignoring leaf values.
  bool same_structure(const DecisionTree& other) const {
    if (num_values_ != other.num_values_) return false;
    const std::size_t n = std::max(nodes_.size(), other.nodes_.size());
    for (std::size_t i = 0; i < n; ++i) {
      const bool live_a = is_live(static_cast<NodeId>(i));
      const bool live_b = other.is_live(static_cast<NodeId>(i));
      if (live_a != live_b) return false;
      if (live_a && !(nodes_[i] == other.nodes_[i])) return false;
    }
    return true;
  }

 private:
  bool same_values(const DecisionTree& other) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].kind != NodeKind::Leaf) continue;
      const auto a = leaf_values(static_cast<NodeId>(i));
      const auto b = other.leaf_values(static_cast<NodeId>(i));
      if (!std::equal(a.begin(), a.end(), b.begin())) return false;
    }
    return true;
  }

  NodeId allocate() {
    if (!free_.empty()) {
      const NodeId id = free_.back();
      free_.pop_back();
      return id;
    }
    nodes_.emplace_back();
    values_.resize(values_.size() + num_values_, 0.0);
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void release(NodeId id) {
    nodes_[static_cast<std::size_t>(id)] = TreeNode{};
    nodes_[static_cast<std::size_t>(id)].kind = NodeKind::Free;
    std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(id) * static_cast<std::ptrdiff_t>(num_values_),
                num_values_, 0.0);
    free_.push_back(id);
  }

  std::vector<NodeId> collect(NodeKind kind) const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].kind == kind) out.push_back(static_cast<NodeId>(i));
    return out;
  }

  std::size_t count(NodeKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [kind](const TreeNode& n) { return n.kind == kind; }));
  }

  std::size_t num_values_;
  std::vector<TreeNode> nodes_;
  std::vector<NodeId> free_;
  std::vector<double> values_;
};

/// Sum over trees of the leaf value in `slot` at the leaf containing x.
inline double evaluate_forest(std::span<const DecisionTree> forest, std::size_t slot,
                              std::span<const double> x) {
  double total = 0.0;
  for (const DecisionTree& tree : forest) total += tree.value(tree.leaf_for(x), slot);
  return total;
}

}  // namespace sharedforest
