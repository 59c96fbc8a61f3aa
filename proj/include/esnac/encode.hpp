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

// Per-layer configuration vectors.
//
// Layer i of a graph with at most n_max layers becomes a vector of width
// m + 2 * n_max + 6 laid out as
//
//   [0, m)                    one-hot layer type
//   [m, m + 6)                kernel size, stride, padding, group, in, out (scaled)
//   [m + 6, m + 6 + n_max)    incoming edges: entry d-1 set for an edge (i - d) -> i
//   [m + 6 + n_max, width)    outgoing edges: entry d-1 set for an edge i -> (i + d)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "esnac/archgraph.hpp"

namespace esnac {

inline constexpr int kNumAttributes = 6;

inline constexpr int encoding_width(int n_max) { return kNumLayerTypes + 2 * n_max + kNumAttributes; }

/// Divisors applied to the attribute block.
struct AttributeScaling {
  double channel_scale = 1.0;  // teacher's largest channel count
  double window_scale = 16.0;  // kernel size, stride, padding, group

  static AttributeScaling for_teacher(const ArchGraph& teacher) {
    int max_ch = 1;
    for (const auto& v : teacher.nodes) max_ch = std::max({max_ch, v.in_channels, v.out_channels});
    return {static_cast<double>(max_ch), 16.0};
  }
  bool operator==(const AttributeScaling&) const = default;
};

using LayerEncoding = std::vector<double>;

struct SequenceEncoding {
  std::vector<LayerEncoding> layers;
  int n_max = 0;

  int width() const { return encoding_width(n_max); }
  bool operator==(const SequenceEncoding&) const = default;
};

inline SequenceEncoding encode(const ArchGraph& g, int n_max, const AttributeScaling& scaling) {
  const int n = static_cast<int>(g.size());
  if (n > n_max)
    throw TooManyLayers("graph has " + std::to_string(n) + " layers, n_max is " + std::to_string(n_max));
  const int width = encoding_width(n_max);
  const int in_block = kNumLayerTypes + kNumAttributes;
  const int out_block = in_block + n_max;

  SequenceEncoding s;
  s.n_max = n_max;
  s.layers.assign(static_cast<std::size_t>(n), LayerEncoding(static_cast<std::size_t>(width), 0.0));
  for (int i = 0; i < n; ++i) {
    const LayerNode& v = g.nodes[static_cast<std::size_t>(i)];
    auto& row = s.layers[static_cast<std::size_t>(i)];
    row[static_cast<std::size_t>(v.type)] = 1.0;
    const std::size_t a = kNumLayerTypes;
    row[a + 0] = v.kernel_size / scaling.window_scale;
    row[a + 1] = v.stride / scaling.window_scale;
    row[a + 2] = v.padding / scaling.window_scale;
    row[a + 3] = v.group / scaling.window_scale;
    row[a + 4] = v.in_channels / scaling.channel_scale;
    row[a + 5] = v.out_channels / scaling.channel_scale;
  }
  for (const auto& [src, dst] : g.edges) {
    const int offset = dst - src;
    if (offset > n_max || offset < 1)
      throw OffsetOverflow("edge (" + std::to_string(src) + ", " + std::to_string(dst) + ") has offset " +
                           std::to_string(offset) + ", n_max is " + std::to_string(n_max));
    s.layers[static_cast<std::size_t>(src)][static_cast<std::size_t>(out_block + offset - 1)] = 1.0;
    s.layers[static_cast<std::size_t>(dst)][static_cast<std::size_t>(in_block + offset - 1)] = 1.0;
  }
  return s;
}

/// Inverse of encode. Spatial sizes are recomputed forward from
/// `input_spatial`, the side length seen by the first layer.
inline ArchGraph decode(const SequenceEncoding& s, const AttributeScaling& scaling, int input_spatial) {
  const int n = static_cast<int>(s.layers.size());
  const int width = s.width();
  const int in_block = kNumLayerTypes + kNumAttributes;
  const int out_block = in_block + s.n_max;
  auto fail = [](int i, const std::string& what) {
    throw Inconsistent("layer " + std::to_string(i) + ": " + what);
  };
  auto as_int = [&](int i, double x, double scale) {
    const double v = x * scale;
    const double r = std::round(v);
    if (std::abs(v - r) > 1e-6 * std::max(1.0, std::abs(v))) fail(i, "attribute is not an integer multiple of its scale");
    return static_cast<int>(r);
  };
  auto as_bit = [&](int i, double x) {
    if (x != 0.0 && x != 1.0) fail(i, "indicator entry is not 0 or 1");
    return x == 1.0;
  };

  for (int i = 0; i < n; ++i)
    if (static_cast<int>(s.layers[static_cast<std::size_t>(i)].size()) != width) fail(i, "wrong vector width");

  ArchGraph g;
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    const auto& row = s.layers[static_cast<std::size_t>(i)];
    int type = -1;
    for (int t = 0; t < kNumLayerTypes; ++t) {
      if (as_bit(i, row[static_cast<std::size_t>(t)])) {
        if (type >= 0) fail(i, "more than one type bit set");
        type = t;
      }
    }
    if (type < 0) fail(i, "no type bit set");
    LayerNode v;
    v.id = i;
    v.type = static_cast<LayerType>(type);
    const std::size_t a = kNumLayerTypes;
    v.kernel_size = as_int(i, row[a + 0], scaling.window_scale);
    v.stride = as_int(i, row[a + 1], scaling.window_scale);
    v.padding = as_int(i, row[a + 2], scaling.window_scale);
    v.group = as_int(i, row[a + 3], scaling.window_scale);
    v.in_channels = as_int(i, row[a + 4], scaling.channel_scale);
    v.out_channels = as_int(i, row[a + 5], scaling.channel_scale);
    g.nodes.push_back(v);

    for (int d = 1; d <= s.n_max; ++d) {
      const bool incoming = as_bit(i, row[static_cast<std::size_t>(in_block + d - 1)]);
      const bool outgoing = as_bit(i, row[static_cast<std::size_t>(out_block + d - 1)]);
      if (incoming) {
        const int src = i - d;
        if (src < 0) fail(i, "incoming edge from before the first layer");
        if (!as_bit(src, s.layers[static_cast<std::size_t>(src)][static_cast<std::size_t>(out_block + d - 1)]))
          fail(i, "incoming bit without matching outgoing bit on layer " + std::to_string(src));
      }
      if (outgoing) {
        const int dst = i + d;
        if (dst >= n) fail(i, "outgoing edge past the last layer");
        if (!as_bit(dst, s.layers[static_cast<std::size_t>(dst)][static_cast<std::size_t>(in_block + d - 1)]))
          fail(i, "outgoing bit without matching incoming bit on layer " + std::to_string(dst));
        edges.emplace_back(i, dst);
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  g.edges = std::move(edges);

  const Adjacency adj(g);
  for (int i = 0; i < n; ++i) {
    LayerNode& v = g.nodes[static_cast<std::size_t>(i)];
    const auto& preds = adj.preds[static_cast<std::size_t>(i)];
    v.in_spatial = preds.empty() ? input_spatial : g.nodes[static_cast<std::size_t>(preds.front())].out_spatial;
    v.out_spatial = expected_out_spatial(v);
  }
  return g;
}

/// Byte string identifying an encoding; equal keys mean equal encodings.
inline std::string encoding_key(const SequenceEncoding& s) {
  std::string key;
  key.reserve(s.layers.size() * static_cast<std::size_t>(s.width()) * sizeof(double) + sizeof(int));
  key.append(reinterpret_cast<const char*>(&s.n_max), sizeof(int));
  for (const auto& row : s.layers) key.append(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(double));
  return key;
}

/// One CSV row of `width()` values per layer; optional header row of column names.
inline void write_csv(std::ostream& out, const SequenceEncoding& s, bool header = false) {
  if (header) {
    for (int t = 0; t < kNumLayerTypes; ++t) out << (t ? "," : "") << "type_" << kLayerTypeNames[static_cast<std::size_t>(t)];
    out << ",kernel_size,stride,padding,group,in_channels,out_channels";
    for (int d = 1; d <= s.n_max; ++d) out << ",in_" << d;
    for (int d = 1; d <= s.n_max; ++d) out << ",out_" << d;
    out << '\n';
  }
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& row : s.layers) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
    out << '\n';
  }
  out.precision(old);
}

}  // namespace esnac
