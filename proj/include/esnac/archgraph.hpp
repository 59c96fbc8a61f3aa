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

// Architecture graphs and the three compression operators.
//
// An ArchGraph is a DAG of typed layers whose node order is a topological
// order (every edge goes from a lower to a higher id). Candidates are derived
// from a teacher graph by one MutationPlan: layer removal, then channel
// shrinkage, then skip-edge addition. Plan ids always refer to the graph the
// plan is applied to.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "esnac/common.hpp"

namespace esnac {

enum class LayerType : int {
  kConv = 0,
  kGroupConv = 1,
  kBatchNorm = 2,
  kRelu = 3,
  kMaxPool = 4,
  kAvgPool = 5,
  kFullyConnected = 6,
  kGlobalAvgPool = 7,
};

/// Number of supported layer types (width of the one-hot type block).
inline constexpr int kNumLayerTypes = 8;

inline constexpr std::array<std::string_view, kNumLayerTypes> kLayerTypeNames = {
    "conv", "group_conv", "batch_norm", "relu", "max_pool", "avg_pool", "fc", "global_avg_pool"};

inline std::string_view to_string(LayerType t) { return kLayerTypeNames[static_cast<int>(t)]; }

inline std::optional<LayerType> layer_type_from_string(std::string_view s) {
  for (int i = 0; i < kNumLayerTypes; ++i)
    if (kLayerTypeNames[i] == s) return static_cast<LayerType>(i);
  return std::nullopt;
}

/// kernel_size / stride / padding are meaningful.
constexpr bool has_window(LayerType t) {
  return t == LayerType::kConv || t == LayerType::kGroupConv || t == LayerType::kMaxPool ||
         t == LayerType::kAvgPool;
}
constexpr bool has_group(LayerType t) { return t == LayerType::kConv || t == LayerType::kGroupConv; }
constexpr bool is_parameterized(LayerType t) {
  return t == LayerType::kConv || t == LayerType::kGroupConv || t == LayerType::kBatchNorm ||
         t == LayerType::kFullyConnected;
}
/// Output channel count always equals input channel count.
constexpr bool preserves_channels(LayerType t) {
  return t == LayerType::kBatchNorm || t == LayerType::kRelu || t == LayerType::kMaxPool ||
         t == LayerType::kAvgPool || t == LayerType::kGlobalAvgPool;
}

struct LayerNode {
  int id = 0;
  LayerType type = LayerType::kConv;
  int kernel_size = 0;
  int stride = 0;
  int padding = 0;
  int group = 0;
  int in_channels = 0;
  int out_channels = 0;
  int in_spatial = 0;
  int out_spatial = 0;

  bool operator==(const LayerNode&) const = default;
};

/// Depthwise convolution: one filter per input channel. Follows its producer's
/// width instead of being shrunk independently.
inline bool is_depthwise(const LayerNode& n) {
  return n.type == LayerType::kGroupConv && n.group == n.in_channels && n.group == n.out_channels;
}

/// Output side length implied by the node's type and attributes, or -1 when the
/// attributes admit no valid output.
inline int expected_out_spatial(const LayerNode& n) {
  if (has_window(n.type)) {
    if (n.kernel_size < 1 || n.stride < 1 || n.padding < 0) return -1;
    const int span = n.in_spatial + 2 * n.padding - n.kernel_size;
    if (span < 0) return -1;
    return span / n.stride + 1;
  }
  if (n.type == LayerType::kGlobalAvgPool) return 1;
  if (n.type == LayerType::kFullyConnected) return n.in_spatial == 1 ? 1 : -1;
  return n.in_spatial;
}

using Edge = std::pair<int, int>;

struct ArchGraph {
  std::vector<LayerNode> nodes;
  std::vector<Edge> edges;  // sorted, unique, src < dst
  std::string teacher_ref;
  // Id of the teacher node each node descends from; empty means the identity map.
  std::vector<int> origin;

  std::size_t size() const { return nodes.size(); }
  int origin_of(int id) const { return origin.empty() ? id : origin[static_cast<std::size_t>(id)]; }
  bool has_edge(int src, int dst) const {
    return std::binary_search(edges.begin(), edges.end(), Edge{src, dst});
  }

  friend bool operator==(const ArchGraph& a, const ArchGraph& b) {
    if (a.nodes != b.nodes || a.edges != b.edges || a.teacher_ref != b.teacher_ref) return false;
    for (std::size_t i = 0; i < a.nodes.size(); ++i)
      if (a.origin_of(static_cast<int>(i)) != b.origin_of(static_cast<int>(i))) return false;
    return true;
  }
};

/// Predecessor / successor lists of a graph.
struct Adjacency {
  std::vector<std::vector<int>> preds;
  std::vector<std::vector<int>> succs;

  explicit Adjacency(const ArchGraph& g) : preds(g.size()), succs(g.size()) {
    for (const auto& [s, d] : g.edges) {
      if (s < 0 || d < 0 || static_cast<std::size_t>(s) >= g.size() ||
          static_cast<std::size_t>(d) >= g.size())
        continue;
      succs[static_cast<std::size_t>(s)].push_back(d);
      preds[static_cast<std::size_t>(d)].push_back(s);
    }
  }
};

inline bool dims_compatible(const LayerNode& src, const LayerNode& dst) {
  return src.out_channels == dst.in_channels && src.out_spatial == dst.in_spatial;
}

/// Returns an empty string when g is a valid ArchGraph, otherwise the first
/// violation found. n_max <= 0 disables the length check.
inline std::string check_graph(const ArchGraph& g, int n_max = 0) {
  std::ostringstream err;
  const auto n = static_cast<int>(g.size());
  if (n == 0) return "graph has no nodes";
  if (n_max > 0 && n > n_max) {
    err << "graph has " << n << " nodes, more than n_max=" << n_max;
    return err.str();
  }
  if (!g.origin.empty() && g.origin.size() != g.size()) return "origin map size does not match node count";
  for (int i = 0; i < n; ++i) {
    const LayerNode& v = g.nodes[static_cast<std::size_t>(i)];
    err.str("");
    err << "node " << i << " (" << to_string(v.type) << "): ";
    if (v.id != i) return err.str() + "id does not match its topological position";
    if (v.in_channels < 1 || v.out_channels < 1) return err.str() + "channel counts must be positive";
    if (v.in_spatial < 1 || v.out_spatial < 1) return err.str() + "spatial sizes must be positive";
    if (has_window(v.type)) {
      if (v.kernel_size < 1 || v.stride < 1 || v.padding < 0)
        return err.str() + "kernel_size and stride must be positive, padding non-negative";
    } else if (v.kernel_size != 0 || v.stride != 0 || v.padding != 0) {
      return err.str() + "kernel_size/stride/padding must be 0 for this type";
    }
    if (v.type == LayerType::kConv && v.group != 1) return err.str() + "conv requires group = 1";
    if (v.type == LayerType::kGroupConv &&
        (v.group < 1 || v.in_channels % v.group != 0 || v.out_channels % v.group != 0))
      return err.str() + "group must divide input and output channels";
    if (!has_group(v.type) && v.group != 0) return err.str() + "group must be 0 for this type";
    if (preserves_channels(v.type) && v.in_channels != v.out_channels)
      return err.str() + "input and output channels must match";
    const int expect = expected_out_spatial(v);
    if (expect < 1 || expect != v.out_spatial) return err.str() + "out_spatial inconsistent with attributes";
  }
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [s, d] = g.edges[e];
    err.str("");
    err << "edge (" << s << ", " << d << "): ";
    if (s < 0 || d >= n || s >= d) return err.str() + "must satisfy 0 <= src < dst < node count";
    if (e > 0 && !(g.edges[e - 1] < g.edges[e])) return err.str() + "edges must be sorted and unique";
    if (!dims_compatible(g.nodes[static_cast<std::size_t>(s)], g.nodes[static_cast<std::size_t>(d)]))
      return err.str() + "output dimension of src differs from input dimension of dst";
  }
  const Adjacency adj(g);
  int sources = 0, sinks = 0;
  for (int i = 0; i < n; ++i) {
    sources += adj.preds[static_cast<std::size_t>(i)].empty() ? 1 : 0;
    sinks += adj.succs[static_cast<std::size_t>(i)].empty() ? 1 : 0;
  }
  if (sources != 1 || sinks != 1) {
    err.str("");
    err << "graph must have exactly one source and one sink (found " << sources << " and " << sinks << ")";
    return err.str();
  }
  return {};
}

inline void validate(const ArchGraph& g, int n_max = 0) {
  if (auto msg = check_graph(g, n_max); !msg.empty()) throw InvalidGraph(msg);
}

/// Learnable parameter count of one layer (bias included).
inline std::int64_t layer_params(const LayerNode& v) {
  const std::int64_t in = v.in_channels, out = v.out_channels;
  switch (v.type) {
    case LayerType::kConv:
    case LayerType::kGroupConv: {
      const std::int64_t k = v.kernel_size, groups = std::max(1, v.group);
      return k * k * (in / groups) * out + out;
    }
    case LayerType::kFullyConnected:
      return in * out + out;
    case LayerType::kBatchNorm:
      return 2 * out;
    default:
      return 0;
  }
}

inline std::int64_t param_count(const ArchGraph& g) {
  std::int64_t total = 0;
  for (const auto& v : g.nodes) total += layer_params(v);
  return total;
}

/// Interior nodes whose input and output dimensions agree.
inline std::vector<int> removable_nodes(const ArchGraph& g) {
  std::vector<int> out;
  const Adjacency adj(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const LayerNode& v = g.nodes[i];
    if (adj.preds[i].empty() || adj.succs[i].empty()) continue;
    if (v.in_channels == v.out_channels && v.in_spatial == v.out_spatial) out.push_back(static_cast<int>(i));
  }
  return out;
}

/// Nodes whose filter count can be shrunk: convolutions (except depthwise ones)
/// and fully connected layers, excluding the sink whose width is the network output.
inline bool is_shrinkable(const ArchGraph& g, const Adjacency& adj, std::size_t i) {
  const LayerNode& v = g.nodes[i];
  if (adj.succs[i].empty()) return false;
  switch (v.type) {
    case LayerType::kConv:
    case LayerType::kFullyConnected:
      return true;
    case LayerType::kGroupConv:
      return !is_depthwise(v);
    default:
      return false;
  }
}

/// Partition of the shrinkable nodes by (in_channels, out_channels). Groups are
/// numbered by first appearance in node order.
struct ShrinkGroups {
  std::vector<std::vector<int>> members;
  std::vector<int> group_of;  // -1 for nodes outside every group

  std::size_t size() const { return members.size(); }
};

inline ShrinkGroups shrink_groups(const ArchGraph& g) {
  ShrinkGroups out;
  out.group_of.assign(g.size(), -1);
  std::map<std::pair<int, int>, int> index;
  const Adjacency adj(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!is_shrinkable(g, adj, i)) continue;
    const auto key = std::make_pair(g.nodes[i].in_channels, g.nodes[i].out_channels);
    auto [it, inserted] = index.try_emplace(key, static_cast<int>(out.members.size()));
    if (inserted) out.members.emplace_back();
    out.members[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(i));
    out.group_of[i] = it->second;
  }
  return out;
}

struct MutationPlan {
  std::vector<int> removals;              // sorted node ids
  std::map<int, double> shrink_ratios;    // group id -> ratio in (0, 1]; missing means 1
  std::vector<Edge> added_skips;          // sorted (src, dst) node ids

  bool operator==(const MutationPlan&) const = default;
};

/// Channel count after shrinking c by ratio r: nearest integer, at least 1
/// (nearest multiple of `multiple`, at least `multiple`, for grouped layers).
inline int shrink_channels(int c, double r, int multiple = 1) {
  const long units = std::lround(static_cast<double>(c) * r / multiple);
  return static_cast<int>(std::max(1L, units)) * multiple;
}

namespace detail {

inline void set_channels(LayerNode& v, int in, int out) {
  v.in_channels = in;
  v.out_channels = out;
}

/// Drops the flagged nodes; every predecessor of a dropped node is connected to
/// every successor, transitively through chains of dropped nodes.
inline ArchGraph drop_nodes(const ArchGraph& g, const std::vector<bool>& drop) {
  const Adjacency adj(g);
  std::vector<int> new_id(g.size(), -1);
  ArchGraph out;
  out.teacher_ref = g.teacher_ref;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (drop[i]) continue;
    new_id[i] = static_cast<int>(out.nodes.size());
    LayerNode v = g.nodes[i];
    v.id = new_id[i];
    out.nodes.push_back(v);
    out.origin.push_back(g.origin_of(static_cast<int>(i)));
  }
  std::set<Edge> edges;
  std::vector<int> stack;
  std::vector<char> seen(g.size());
  for (std::size_t u = 0; u < g.size(); ++u) {
    if (drop[u]) continue;
    std::fill(seen.begin(), seen.end(), 0);
    stack.assign(adj.succs[u].begin(), adj.succs[u].end());
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      if (seen[static_cast<std::size_t>(v)]) continue;
      seen[static_cast<std::size_t>(v)] = 1;
      if (drop[static_cast<std::size_t>(v)]) {
        for (int w : adj.succs[static_cast<std::size_t>(v)]) stack.push_back(w);
      } else {
        edges.emplace(new_id[u], new_id[static_cast<std::size_t>(v)]);
      }
    }
  }
  out.edges.assign(edges.begin(), edges.end());
  return out;
}

/// Re-derives every channel count of `g` in node order: shrinkable nodes get
/// round(teacher_out * ratio), channel-preserving nodes follow their producer,
/// and every node's input width is its producers' common output width.
/// `node_ratio[i]` is used for shrinkable node i only.
inline ArchGraph reshape_channels(const ArchGraph& g, const std::vector<bool>& shrinkable,
                                  const std::vector<double>& node_ratio) {
  ArchGraph out = g;
  const Adjacency adj(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    LayerNode& v = out.nodes[i];
    int in = v.in_channels;
    if (!adj.preds[i].empty()) {
      in = out.nodes[static_cast<std::size_t>(adj.preds[i].front())].out_channels;
      for (int p : adj.preds[i]) {
        if (out.nodes[static_cast<std::size_t>(p)].out_channels != in) {
          std::ostringstream msg;
          msg << "producers of node " << i << " disagree on channel count after shrinkage";
          throw InvalidPlan(msg.str());
        }
      }
    }
    const LayerNode& orig = g.nodes[i];
    int out_ch = orig.out_channels;
    if (preserves_channels(v.type)) {
      out_ch = in;
    } else if (is_depthwise(orig)) {
      out_ch = in;
      v.group = in;
    } else if (shrinkable[i]) {
      const int multiple = v.type == LayerType::kGroupConv ? v.group : 1;
      out_ch = shrink_channels(orig.out_channels, node_ratio[i], multiple);
    }
    if (v.type == LayerType::kGroupConv && in % v.group != 0) {
      std::ostringstream msg;
      msg << "node " << i << ": input width " << in << " not divisible by group " << v.group;
      throw InvalidPlan(msg.str());
    }
    set_channels(v, in, out_ch);
  }
  return out;
}

inline std::vector<Edge> compatible_pairs(const ArchGraph& g) {
  std::vector<Edge> pairs;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j)
      if (dims_compatible(g.nodes[i], g.nodes[j]) &&
          !g.has_edge(static_cast<int>(i), static_cast<int>(j)))
        pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return pairs;
}

}  // namespace detail

/// Skip edges that may be added to g: dimension-compatible, forward, not yet edges.
inline std::vector<Edge> candidate_skips(const ArchGraph& g) { return detail::compatible_pairs(g); }

inline ArchGraph apply_mutation(const ArchGraph& g, const MutationPlan& plan) {
  const std::size_t n = g.size();
  const std::vector<int> removable = removable_nodes(g);
  std::vector<bool> drop(n, false);
  for (int r : plan.removals) {
    if (!std::binary_search(removable.begin(), removable.end(), r)) {
      std::ostringstream msg;
      msg << "node " << r << " is not removable";
      throw InvalidPlan(msg.str());
    }
    drop[static_cast<std::size_t>(r)] = true;
  }

  const ShrinkGroups groups = shrink_groups(g);
  std::vector<double> group_ratio(groups.size(), 1.0);
  for (const auto& [gid, ratio] : plan.shrink_ratios) {
    if (gid < 0 || static_cast<std::size_t>(gid) >= groups.size()) {
      std::ostringstream msg;
      msg << "unknown shrink group " << gid;
      throw InvalidPlan(msg.str());
    }
    if (!(ratio > 0.0 && ratio <= 1.0)) {
      std::ostringstream msg;
      msg << "shrink ratio " << ratio << " for group " << gid << " outside (0, 1]";
      throw InvalidPlan(msg.str());
    }
    group_ratio[static_cast<std::size_t>(gid)] = ratio;
  }

  ArchGraph reduced = detail::drop_nodes(g, drop);
  std::vector<int> new_id(n, -1);
  {
    int next = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (!drop[i]) new_id[i] = next++;
  }
  std::vector<bool> shrinkable(reduced.size(), false);
  std::vector<double> node_ratio(reduced.size(), 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (drop[i] || groups.group_of[i] < 0) continue;
    const auto k = static_cast<std::size_t>(new_id[i]);
    shrinkable[k] = true;
    node_ratio[k] = group_ratio[static_cast<std::size_t>(groups.group_of[i])];
  }
  ArchGraph out = detail::reshape_channels(reduced, shrinkable, node_ratio);

  std::set<Edge> edges(out.edges.begin(), out.edges.end());
  for (const auto& [s, d] : plan.added_skips) {
    std::ostringstream msg;
    msg << "skip (" << s << ", " << d << "): ";
    if (s < 0 || d < 0 || static_cast<std::size_t>(s) >= n || static_cast<std::size_t>(d) >= n)
      throw InvalidPlan(msg.str() + "endpoint out of range");
    if (drop[static_cast<std::size_t>(s)] || drop[static_cast<std::size_t>(d)])
      throw InvalidPlan(msg.str() + "endpoint is removed by the same plan");
    const int ns = new_id[static_cast<std::size_t>(s)], nd = new_id[static_cast<std::size_t>(d)];
    if (ns >= nd) throw InvalidPlan(msg.str() + "must point forward");
    if (edges.count({ns, nd})) throw InvalidPlan(msg.str() + "already an edge");
    if (!dims_compatible(out.nodes[static_cast<std::size_t>(ns)], out.nodes[static_cast<std::size_t>(nd)]))
      throw InvalidPlan(msg.str() + "dimension mismatch");
    edges.emplace(ns, nd);
  }
  out.edges.assign(edges.begin(), edges.end());

  if (auto err = check_graph(out); !err.empty()) throw InvalidPlan("result is not a valid graph: " + err);
  return out;
}

/// Distributions used to draw a MutationPlan.
struct SamplePolicy {
  double removal_prob = 0.25;
  std::vector<double> ratios{0.25, 0.5, 0.75, 1.0};
  int max_skips = 3;    // skip count ~ uniform {0, ..., max_skips}
  int max_retries = 32;  // redraws before falling back to the identity plan
};

struct SampledArch {
  ArchGraph graph;
  MutationPlan plan;
};

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
};

/// Components of shrink groups whose widths must agree in `reduced` (a graph
/// after removals), because they meet at a summation join or flow into the same
/// channel-following layer. The extra id `groups.size()` stands for widths that
/// cannot change (the network input).
inline std::vector<int> coupled_components(const ArchGraph& reduced, const ShrinkGroups& groups,
                                           const std::vector<int>& group_of_reduced) {
  const std::size_t fixed = groups.size();
  UnionFind uf(groups.size() + 1);
  const Adjacency adj(reduced);
  std::vector<int> width_of(reduced.size(), static_cast<int>(fixed));
  for (std::size_t i = 0; i < reduced.size(); ++i) {
    const auto& preds = adj.preds[i];
    for (std::size_t k = 1; k < preds.size(); ++k)
      uf.unite(width_of[static_cast<std::size_t>(preds[0])], width_of[static_cast<std::size_t>(preds[k])]);
    if (group_of_reduced[i] >= 0) {
      width_of[i] = group_of_reduced[i];
    } else if (preds.empty()) {
      width_of[i] = static_cast<int>(fixed);
    } else if (preserves_channels(reduced.nodes[i].type) || is_depthwise(reduced.nodes[i])) {
      width_of[i] = width_of[static_cast<std::size_t>(preds[0])];
    } else {
      width_of[i] = static_cast<int>(fixed);
    }
  }
  std::vector<int> comp(groups.size() + 1);
  for (std::size_t k = 0; k <= groups.size(); ++k) comp[k] = uf.find(static_cast<int>(k));
  return comp;
}

}  // namespace detail

/// Draws one MutationPlan for g without validating it. Removals are Bernoulli
/// per removable node; one ratio is drawn per set of width-coupled shrink groups;
/// skips are drawn among the pairs that are compatible after removal and shrinkage.
inline MutationPlan draw_plan(const ArchGraph& g, Rng& rng, const SamplePolicy& policy) {
  MutationPlan plan;
  std::vector<bool> drop(g.size(), false);
  for (int r : removable_nodes(g)) {
    if (uniform01(rng) < policy.removal_prob) {
      plan.removals.push_back(r);
      drop[static_cast<std::size_t>(r)] = true;
    }
  }

  const ShrinkGroups groups = shrink_groups(g);
  const ArchGraph reduced = detail::drop_nodes(g, drop);
  std::vector<int> group_of_reduced, kept_ids;
  group_of_reduced.reserve(reduced.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (drop[i]) continue;
    group_of_reduced.push_back(groups.group_of[i]);
    kept_ids.push_back(static_cast<int>(i));
  }
  const std::vector<int> comp = detail::coupled_components(reduced, groups, group_of_reduced);
  const int fixed_root = comp[groups.size()];
  std::map<int, double> comp_ratio;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    double r = 1.0;
    if (comp[k] != fixed_root) {
      auto it = comp_ratio.find(comp[k]);
      if (it == comp_ratio.end() && !policy.ratios.empty()) {
        it = comp_ratio.emplace(comp[k], policy.ratios[uniform_index(rng, policy.ratios.size())]).first;
      }
      if (it != comp_ratio.end()) r = it->second;
    }
    if (r != 1.0) plan.shrink_ratios[static_cast<int>(k)] = r;
  }

  if (policy.max_skips > 0) {
    const auto count = uniform_index(rng, static_cast<std::size_t>(policy.max_skips) + 1);
    if (count > 0) {
      MutationPlan shrink_only = plan;
      ArchGraph shaped;
      try {
        shaped = apply_mutation(g, shrink_only);
      } catch (const InvalidPlan&) {
        return plan;  // caller re-draws
      }
      std::vector<Edge> pairs = detail::compatible_pairs(shaped);
      const std::size_t take = std::min<std::size_t>(count, pairs.size());
      for (std::size_t k = 0; k < take; ++k) {
        const std::size_t pick = k + uniform_index(rng, pairs.size() - k);
        std::swap(pairs[k], pairs[pick]);
        const auto [s, d] = pairs[k];
        plan.added_skips.emplace_back(kept_ids[static_cast<std::size_t>(s)],
                                      kept_ids[static_cast<std::size_t>(d)]);
      }
      std::sort(plan.added_skips.begin(), plan.added_skips.end());
    }
  }
  return plan;
}

/// Samples a compressed architecture from g's search space; a pure function of
/// (g, seed, policy). Falls back to the identity plan when every draw is invalid.
inline SampledArch sample_compressed_with_plan(const ArchGraph& g, std::uint64_t seed,
                                               const SamplePolicy& policy = {}) {
  Rng rng(seed);
  for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
    MutationPlan plan = draw_plan(g, rng, policy);
    try {
      ArchGraph out = apply_mutation(g, plan);
      return {std::move(out), std::move(plan)};
    } catch (const InvalidPlan&) {
    }
  }
  return {apply_mutation(g, MutationPlan{}), MutationPlan{}};
}

inline ArchGraph sample_compressed(const ArchGraph& g, std::uint64_t seed, const SamplePolicy& policy = {}) {
  return sample_compressed_with_plan(g, seed, policy).graph;
}

/// Recovers a plan that maps `teacher` onto `g` by diffing, using g's origin
/// map. Shrink ratios are searched in `ratio_set`. Returns nullopt when g is
/// not reachable from the teacher by a single plan.
inline std::optional<MutationPlan> derive_plan(const ArchGraph& teacher, const ArchGraph& g,
                                               const std::vector<double>& ratio_set = SamplePolicy{}.ratios) {
  if (g.size() == 0 || g.size() > teacher.size()) return std::nullopt;
  std::vector<bool> kept(teacher.size(), false);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int o = g.origin_of(static_cast<int>(i));
    if (o < 0 || static_cast<std::size_t>(o) >= teacher.size() || kept[static_cast<std::size_t>(o)])
      return std::nullopt;
    if (i > 0 && o <= g.origin_of(static_cast<int>(i) - 1)) return std::nullopt;
    kept[static_cast<std::size_t>(o)] = true;
  }
  MutationPlan plan;
  for (std::size_t i = 0; i < teacher.size(); ++i)
    if (!kept[i]) plan.removals.push_back(static_cast<int>(i));

  std::vector<int> teacher_to_g(teacher.size(), -1);
  for (std::size_t i = 0; i < g.size(); ++i) teacher_to_g[static_cast<std::size_t>(g.origin_of(static_cast<int>(i)))] = static_cast<int>(i);

  const ShrinkGroups groups = shrink_groups(teacher);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    std::vector<int> alive;
    for (int m : groups.members[k])
      if (teacher_to_g[static_cast<std::size_t>(m)] >= 0) alive.push_back(m);
    if (alive.empty()) continue;
    std::optional<double> found;
    for (double r : ratio_set) {
      bool ok = true;
      for (int m : alive) {
        const LayerNode& t = teacher.nodes[static_cast<std::size_t>(m)];
        const int multiple = t.type == LayerType::kGroupConv ? t.group : 1;
        if (shrink_channels(t.out_channels, r, multiple) !=
            g.nodes[static_cast<std::size_t>(teacher_to_g[static_cast<std::size_t>(m)])].out_channels) {
          ok = false;
          break;
        }
      }
      if (ok) {
        found = r;
        break;
      }
    }
    if (!found) return std::nullopt;
    if (*found != 1.0) plan.shrink_ratios[static_cast<int>(k)] = *found;
  }

  ArchGraph base;
  try {
    base = apply_mutation(teacher, plan);
  } catch (const InvalidPlan&) {
    return std::nullopt;
  }
  if (base.size() != g.size()) return std::nullopt;
  for (const auto& e : g.edges)
    if (!base.has_edge(e.first, e.second))
      plan.added_skips.emplace_back(g.origin_of(e.first), g.origin_of(e.second));
  try {
    if (apply_mutation(teacher, plan) == g) return plan;
  } catch (const InvalidPlan&) {
  }
  return std::nullopt;
}

/// Number of edges of g that do not come from the teacher after g's removals.
/// Requires g's origin map to refer to `teacher`.
inline int added_skip_count(const ArchGraph& teacher, const ArchGraph& g) {
  std::vector<bool> drop(teacher.size(), true);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int o = g.origin_of(static_cast<int>(i));
    if (o >= 0 && static_cast<std::size_t>(o) < teacher.size()) drop[static_cast<std::size_t>(o)] = false;
  }
  const ArchGraph base = detail::drop_nodes(teacher, drop);
  return std::max(0, static_cast<int>(g.edges.size()) - static_cast<int>(base.edges.size()));
}

}  // namespace esnac
