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

// JSON form of a decision tree:
//
//   {"num_values": S,
//    "nodes": [{"id": 0, "kind": "branch", "parent": -1, "depth": 0,
//               "axis": 2, "cutpoint": 0.41, "children": [1, 2]},
//              {"id": 1, "kind": "leaf", "parent": 0, "depth": 1,
//               "values": [v_0, ..., v_{S-1}]},
//              {"id": 3, "kind": "free"}, ...],
//    "free": [3, ...]}
//
// Axes are zero-based. Doubles are written in shortest round-trip form, so
// a parse of the dump reproduces the arena bit for bit.

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sharedforest/tree.hpp"

namespace sharedforest {

inline nlohmann::json tree_to_json(const DecisionTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < tree.capacity(); ++i) {
    const auto id = static_cast<NodeId>(i);
    const TreeNode& n = tree.node(id);
    nlohmann::json j;
    j["id"] = id;
    switch (n.kind) {
      case NodeKind::Free:
        j["kind"] = "free";
        break;
      case NodeKind::Leaf: {
        j["kind"] = "leaf";
        j["parent"] = n.parent;
        j["depth"] = n.depth;
        const auto v = tree.leaf_values(id);
        j["values"] = std::vector<double>(v.begin(), v.end());
        break;
      }
      case NodeKind::Branch:
        j["kind"] = "branch";
        j["parent"] = n.parent;
        j["depth"] = n.depth;
        j["axis"] = n.rule.axis;
        j["cutpoint"] = n.rule.cutpoint;
        j["children"] = {n.left, n.right};
        break;
    }
    nodes.push_back(std::move(j));
  }
  return {{"num_values", tree.num_values()}, {"nodes", std::move(nodes)}, {"free", tree.free_ids()}};
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  const auto num_values = j.at("num_values").get<std::size_t>();
  const auto& jn = j.at("nodes");
  std::vector<TreeNode> nodes(jn.size());
  std::vector<double> values(jn.size() * num_values, 0.0);
  for (std::size_t i = 0; i < jn.size(); ++i) {
    const auto& e = jn[i];
    if (e.at("id").get<std::size_t>() != i) throw InvalidTreeError("tree json: node ids must be dense and ordered");
    const auto kind = e.at("kind").get<std::string>();
    TreeNode& n = nodes[i];
    if (kind == "free") {
      n.kind = NodeKind::Free;
      continue;
    }
    n.parent = e.at("parent").get<NodeId>();
    n.depth = e.at("depth").get<std::int32_t>();
    if (kind == "leaf") {
      n.kind = NodeKind::Leaf;
      const auto v = e.at("values").get<std::vector<double>>();
      if (v.size() != num_values) throw InvalidTreeError("tree json: leaf value count mismatch");
      std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(i * num_values));
    } else if (kind == "branch") {
      n.kind = NodeKind::Branch;
      n.rule.axis = e.at("axis").get<std::int32_t>();
      n.rule.cutpoint = e.at("cutpoint").get<double>();
      n.left = e.at("children").at(0).get<NodeId>();
      n.right = e.at("children").at(1).get<NodeId>();
    } else {
      throw InvalidTreeError("tree json: unknown node kind '" + kind + "'");
    }
  }
  return DecisionTree::from_arena(num_values, std::move(nodes), j.at("free").get<std::vector<NodeId>>(),
                                  std::move(values));
}

}  // namespace sharedforest
