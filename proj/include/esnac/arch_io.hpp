/*
 * Copyright 2026 The esnac Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

// Architecture documents (JSON).
//
//   {"format": "esnac-arch", "version": 1, "teacher_ref": "...",
//    "nodes": [{"id": 0, "type": "conv", "kernel_size": 3, "stride": 1,
//               "padding": 1, "group": 1, "in_channels": 3, "out_channels": 16,
//               "in_spatial": 32, "out_spatial": 32}, ...],
//    "edges": [[0, 1], ...],
//    "origin": [0, 1, ...]}            (optional)
//
// Node ids in a document may be arbitrary distinct integers; loading puts the
// nodes in canonical topological order (Kahn's algorithm, ties broken by the
// smaller id) and renumbers them.

#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "esnac/archgraph.hpp"

namespace esnac {

inline constexpr int kArchFormatVersion = 1;

inline nlohmann::json to_json(const LayerNode& v) {
  return {{"id", v.id},
          {"type", std::string(to_string(v.type))},
          {"kernel_size", v.kernel_size},
          {"stride", v.stride},
          {"padding", v.padding},
          {"group", v.group},
          {"in_channels", v.in_channels},
          {"out_channels", v.out_channels},
          {"in_spatial", v.in_spatial},
          {"out_spatial", v.out_spatial}};
}

inline nlohmann::json to_json(const ArchGraph& g) {
  nlohmann::json doc;
  doc["format"] = "esnac-arch";
  doc["version"] = kArchFormatVersion;
  doc["teacher_ref"] = g.teacher_ref;
  auto& nodes = doc["nodes"] = nlohmann::json::array();
  for (const auto& v : g.nodes) nodes.push_back(to_json(v));
  auto& edges = doc["edges"] = nlohmann::json::array();
  for (const auto& [s, d] : g.edges) edges.push_back({s, d});
  if (!g.origin.empty()) doc["origin"] = g.origin;
  return doc;
}

/// Reorders nodes into canonical topological order and renumbers ids and
/// edges accordingly. Throws InvalidGraph on cycles or dangling edges.
inline ArchGraph canonicalize(const std::vector<LayerNode>& nodes, const std::vector<Edge>& edges,
                              std::string teacher_ref = {}, std::vector<int> origin = {}) {
  std::map<int, std::size_t> index_of;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!index_of.emplace(nodes[i].id, i).second)
      throw InvalidGraph("duplicate node id " + std::to_string(nodes[i].id));
  }
  std::vector<std::vector<std::size_t>> succs(nodes.size());
  std::vector<int> indegree(nodes.size(), 0);
  for (const auto& [s, d] : edges) {
    auto si = index_of.find(s), di = index_of.find(d);
    if (si == index_of.end() || di == index_of.end())
      throw InvalidGraph("edge (" + std::to_string(s) + ", " + std::to_string(d) + ") references an unknown node");
    succs[si->second].push_back(di->second);
    ++indegree[di->second];
  }
  using Item = std::pair<int, std::size_t>;  // (original id, index)
  std::priority_queue<Item, std::vector<Item>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (indegree[i] == 0) ready.emplace(nodes[i].id, i);
  std::vector<int> new_id(nodes.size(), -1);
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const auto [id, i] = ready.top();
    ready.pop();
    new_id[i] = static_cast<int>(order.size());
    order.push_back(i);
    for (std::size_t j : succs[i])
      if (--indegree[j] == 0) ready.emplace(nodes[j].id, j);
  }
  if (order.size() != nodes.size()) throw InvalidGraph("graph contains a cycle");

  ArchGraph g;
  g.teacher_ref = std::move(teacher_ref);
  for (std::size_t i : order) {
    LayerNode v = nodes[i];
    v.id = new_id[i];
    g.nodes.push_back(v);
  }
  if (!origin.empty()) {
    if (origin.size() != nodes.size()) throw InvalidGraph("origin length does not match node count");
    for (std::size_t i : order) g.origin.push_back(origin[i]);
  }
  std::set<Edge> sorted;
  for (const auto& [s, d] : edges)
    sorted.emplace(new_id[index_of.at(s)], new_id[index_of.at(d)]);
  g.edges.assign(sorted.begin(), sorted.end());
  return g;
}

/// Parses and validates an architecture document.
inline ArchGraph arch_from_json(const nlohmann::json& doc, int n_max = 0) {
  if (!doc.is_object()) throw InvalidGraph("architecture document must be a JSON object");
  if (doc.contains("version") && doc.at("version") != kArchFormatVersion)
    throw InvalidGraph("unsupported architecture format version");
  if (!doc.contains("nodes") || !doc.at("nodes").is_array()) throw InvalidGraph("missing 'nodes' array");
  std::vector<LayerNode> nodes;
  try {
    for (const auto& jn : doc.at("nodes")) {
      LayerNode v;
      v.id = jn.at("id").get<int>();
      const auto type_name = jn.at("type").get<std::string>();
      const auto type = layer_type_from_string(type_name);
      if (!type) throw InvalidGraph("unknown layer type '" + type_name + "'");
      v.type = *type;
      v.kernel_size = jn.value("kernel_size", 0);
      v.stride = jn.value("stride", 0);
      v.padding = jn.value("padding", 0);
      v.group = jn.value("group", 0);
      v.in_channels = jn.at("in_channels").get<int>();
      v.out_channels = jn.at("out_channels").get<int>();
      v.in_spatial = jn.at("in_spatial").get<int>();
      v.out_spatial = jn.at("out_spatial").get<int>();
      nodes.push_back(v);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidGraph(std::string("malformed node: ") + e.what());
  }
  std::vector<Edge> edges;
  std::vector<int> origin;
  try {
    if (doc.contains("edges"))
      for (const auto& je : doc.at("edges")) edges.emplace_back(je.at(0).get<int>(), je.at(1).get<int>());
    if (doc.contains("origin")) origin = doc.at("origin").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidGraph(std::string("malformed edge list: ") + e.what());
  }
  ArchGraph g = canonicalize(nodes, edges, doc.value("teacher_ref", std::string{}), std::move(origin));
  validate(g, n_max);
  return g;
}

inline ArchGraph load_arch(const std::string& path, int n_max = 0) {
  std::ifstream in(path);
  if (!in) throw InvalidGraph("cannot open architecture file '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidGraph("'" + path + "' is not valid JSON: " + e.what());
  }
  return arch_from_json(doc, n_max);
}

inline void save_arch(const ArchGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << to_json(g).dump(2) << '\n';
}

}  // namespace esnac
