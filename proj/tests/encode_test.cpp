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

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "esnac/arch_io.hpp"
#include "esnac/encode.hpp"
#include "esnac/zoo.hpp"

namespace esnac {
namespace {

TEST(Encode, WidthFormula) {
  EXPECT_EQ(encoding_width(10), 8 + 20 + 6);
  EXPECT_EQ(encoding_width(1), 16);
}

// Hand-built expected vectors for conv(3->8) -> relu -> gap -> fc(8->10)
// with a skip conv -> gap, n_max 5.
TEST(Encode, HandComputedVectors) {
  GraphBuilder b("tiny", 3, 4);
  const int c = b.conv(GraphBuilder::kInput, 8, 3, 1, 1);
  const int r = b.relu(c);
  b.fc(b.add({.type = LayerType::kGlobalAvgPool}, {r, c}), 10);
  const ArchGraph g = b.build();
  const AttributeScaling scaling{10.0, 16.0};
  const SequenceEncoding s = encode(g, 5, scaling);
  ASSERT_EQ(s.layers.size(), 4u);
  ASSERT_EQ(s.width(), 24);

  using V = std::vector<double>;
  //            conv gcv bn relu mxp avp fc gap | k       s      p      g      in    out  | in d1..5  | out d1..5
  const V conv{1, 0, 0, 0, 0, 0, 0, 0, 3 / 16., 1 / 16., 1 / 16., 1 / 16., 0.3, 0.8, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0};
  const V relu{0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0.8, 0.8, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0};
  const V gap{0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0.8, 0.8, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0};
  const V fc{0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0.8, 1.0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  for (std::size_t k = 0; k < 24; ++k) {
    EXPECT_DOUBLE_EQ(s.layers[0][k], conv[k]) << "conv col " << k;
    EXPECT_DOUBLE_EQ(s.layers[1][k], relu[k]) << "relu col " << k;
    EXPECT_DOUBLE_EQ(s.layers[2][k], gap[k]) << "gap col " << k;
    EXPECT_DOUBLE_EQ(s.layers[3][k], fc[k]) << "fc col " << k;
  }
}

TEST(Encode, OffsetSemantics) {
  const ArchGraph g = toy_resnet();
  const int n_max = 24;
  const SequenceEncoding s = encode(g, n_max, AttributeScaling::for_teacher(g));
  const std::size_t in_block = kNumLayerTypes + kNumAttributes;
  const std::size_t out_block = in_block + n_max;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int d = 1; d <= n_max; ++d) {
      const int src = static_cast<int>(i) - d, dst = static_cast<int>(i) + d;
      const bool in_expected = src >= 0 && g.has_edge(src, static_cast<int>(i));
      const bool out_expected = dst < static_cast<int>(g.size()) && g.has_edge(static_cast<int>(i), dst);
      EXPECT_EQ(s.layers[i][in_block + d - 1], in_expected ? 1.0 : 0.0);
      EXPECT_EQ(s.layers[i][out_block + d - 1], out_expected ? 1.0 : 0.0);
    }
  }
}

TEST(Encode, TooManyLayers) {
  const ArchGraph g = toy_resnet();  // 19 layers
  EXPECT_THROW(encode(g, 18, {}), TooManyLayers);
  EXPECT_NO_THROW(encode(g, 19, {}));
}

// Every edge of a valid graph has offset below its layer count, so the
// overflow check is probed with an edge pointing past the last layer.
TEST(Encode, OffsetOverflow) {
  ArchGraph g = toy_chain6();
  g.edges.emplace_back(0, 7);
  EXPECT_THROW(encode(g, 6, {}), OffsetOverflow);
}

TEST(Decode, RoundTripOverSampledGraphs) {
  const ArchGraph teacher = toy_resnet(2, 2);
  const int n_max = static_cast<int>(teacher.size());
  const AttributeScaling scaling = AttributeScaling::for_teacher(teacher);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    ArchGraph g = sample_compressed(teacher, seed);
    const SequenceEncoding s = encode(g, n_max, scaling);
    ArchGraph back = decode(s, scaling, g.nodes.front().in_spatial);
    back.teacher_ref = g.teacher_ref;
    back.origin = g.origin;
    ASSERT_EQ(back.nodes, g.nodes) << "seed " << seed;
    ASSERT_EQ(back.edges, g.edges) << "seed " << seed;
    EXPECT_EQ(encode(back, n_max, scaling), s);
  }
}

TEST(Decode, IsomorphicRelabelingGivesSameEncoding) {
  const ArchGraph g = toy_resnet();
  const AttributeScaling scaling = AttributeScaling::for_teacher(g);
  const SequenceEncoding ref = encode(g, 19, scaling);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    // Relabel with random distinct ids that still respect the canonical
    // tie-break (monotone relabeling), and shuffle the node list.
    std::vector<int> ids(g.size());
    int next = 0;
    for (auto& id : ids) id = (next += 1 + static_cast<int>(rng() % 7));
    std::vector<LayerNode> nodes = g.nodes;
    for (auto& v : nodes) v.id = ids[static_cast<std::size_t>(v.id)];
    std::shuffle(nodes.begin(), nodes.end(), rng);
    std::vector<Edge> edges;
    for (const auto& [s, d] : g.edges) edges.emplace_back(ids[static_cast<std::size_t>(s)], ids[static_cast<std::size_t>(d)]);
    std::shuffle(edges.begin(), edges.end(), rng);
    const ArchGraph h = canonicalize(nodes, edges, g.teacher_ref);
    EXPECT_EQ(encode(h, 19, scaling), ref);
  }
}

TEST(Decode, RejectsInconsistentVectors) {
  const ArchGraph g = toy_chain6();
  const AttributeScaling scaling = AttributeScaling::for_teacher(g);
  const SequenceEncoding s = encode(g, 6, scaling);

  SequenceEncoding two_types = s;
  two_types.layers[1][0] = 1.0;
  EXPECT_THROW(decode(two_types, scaling, 8), Inconsistent);

  SequenceEncoding half_edge = s;
  half_edge.layers[0][kNumLayerTypes + kNumAttributes + 6 + 2] = 1.0;  // 0 -> 3 without matching incoming bit
  EXPECT_THROW(decode(half_edge, scaling, 8), Inconsistent);

  SequenceEncoding fractional = s;
  fractional.layers[0][kNumLayerTypes + 4] = 0.123;
  EXPECT_THROW(decode(fractional, scaling, 8), Inconsistent);

  SequenceEncoding short_row = s;
  short_row.layers[3].pop_back();
  EXPECT_THROW(decode(short_row, scaling, 8), Inconsistent);
}

TEST(WriteCsv, OneRowPerLayer) {
  const ArchGraph g = toy_chain6();
  const SequenceEncoding s = encode(g, 6, AttributeScaling::for_teacher(g));
  std::ostringstream out;
  write_csv(out, s);
  std::istringstream in(out.str());
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1, encoding_width(6));
  }
  EXPECT_EQ(rows, g.size());
}

}  // namespace
}  // namespace esnac
