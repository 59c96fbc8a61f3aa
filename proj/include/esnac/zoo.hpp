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

// Builder for hand-written architectures and a few small teachers.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "esnac/archgraph.hpp"

namespace esnac {

class GraphBuilder {
 public:
  GraphBuilder(std::string name, int in_channels, int in_spatial)
      : in_channels_(in_channels), in_spatial_(in_spatial) {
    graph_.teacher_ref = std::move(name);
  }

  /// Pass kInput as the producer of the first layer.
  static constexpr int kInput = -1;

  int conv(int from, int out, int k, int stride = 1, int pad = 0) {
    return add({.type = LayerType::kConv, .kernel_size = k, .stride = stride, .padding = pad, .group = 1,
                .out_channels = out},
               {from});
  }
  int group_conv(int from, int out, int k, int stride, int pad, int group) {
    return add({.type = LayerType::kGroupConv, .kernel_size = k, .stride = stride, .padding = pad,
                .group = group, .out_channels = out},
               {from});
  }
  int batch_norm(int from) { return add({.type = LayerType::kBatchNorm}, {from}); }
  int relu(std::vector<int> from) { return add({.type = LayerType::kRelu}, std::move(from)); }
  int relu(int from) { return relu(std::vector<int>{from}); }
  int max_pool(int from, int k, int stride, int pad = 0) {
    return add({.type = LayerType::kMaxPool, .kernel_size = k, .stride = stride, .padding = pad}, {from});
  }
  int avg_pool(int from, int k, int stride, int pad = 0) {
    return add({.type = LayerType::kAvgPool, .kernel_size = k, .stride = stride, .padding = pad}, {from});
  }
  int global_avg_pool(int from) { return add({.type = LayerType::kGlobalAvgPool}, {from}); }
  int fc(int from, int out) { return add({.type = LayerType::kFullyConnected, .out_channels = out}, {from}); }

  /// Appends a layer fed by the sum of `inputs`. Output width / spatial size
  /// are derived from the type; proto.out_channels is used by conv and fc only.
  int add(LayerNode proto, std::vector<int> inputs) {
    const int id = static_cast<int>(graph_.nodes.size());
    proto.id = id;
    if (inputs.empty() || inputs.front() == kInput) {
      proto.in_channels = in_channels_;
      proto.in_spatial = in_spatial_;
    } else {
      const LayerNode& src = graph_.nodes[static_cast<std::size_t>(inputs.front())];
      proto.in_channels = src.out_channels;
      proto.in_spatial = src.out_spatial;
    }
    if (preserves_channels(proto.type)) proto.out_channels = proto.in_channels;
    proto.out_spatial = expected_out_spatial(proto);
    graph_.nodes.push_back(proto);
    for (int from : inputs)
      if (from != kInput) graph_.edges.emplace_back(from, id);
    return id;
  }

  ArchGraph build() const {
    ArchGraph g = graph_;
    std::sort(g.edges.begin(), g.edges.end());
    validate(g);
    return g;
  }

 private:
  ArchGraph graph_;
  int in_channels_;
  int in_spatial_;
};

/// ResNet-style teacher: stem conv-bn-relu, then `stages` stages of
/// `blocks_per_stage` basic blocks (conv-bn-relu-conv-bn summed with the
/// shortcut, then relu); stages after the first halve the spatial size and
/// double the width through a strided conv and a 1x1 projection shortcut.
inline ArchGraph toy_resnet(int blocks_per_stage = 1, int stages = 2, int base_width = 16, int classes = 10,
                            int input_spatial = 32) {
  GraphBuilder b("toy-resnet-" + std::to_string(stages) + "x" + std::to_string(blocks_per_stage), 3,
                 input_spatial);
  int x = b.relu(b.batch_norm(b.conv(GraphBuilder::kInput, base_width, 3, 1, 1)));
  int width = base_width;
  for (int s = 0; s < stages; ++s) {
    for (int k = 0; k < blocks_per_stage; ++k) {
      const bool down = s > 0 && k == 0;
      const int out = down ? width * 2 : width;
      int y = b.conv(x, out, 3, down ? 2 : 1, 1);
      y = b.relu(b.batch_norm(y));
      y = b.batch_norm(b.conv(y, out, 3, 1, 1));
      int shortcut = x;
      if (down) shortcut = b.batch_norm(b.conv(x, out, 1, 2, 0));
      x = b.relu(std::vector<int>{y, shortcut});
      width = out;
    }
  }
  b.fc(b.global_avg_pool(x), classes);
  return b.build();
}

/// Plain VGG-style chain: (conv-bn-relu) x per_stage then max-pool, per width.
inline ArchGraph toy_vgg(const std::vector<int>& widths = {16, 32}, int per_stage = 2, int classes = 10,
                         int input_spatial = 32) {
  GraphBuilder b("toy-vgg", 3, input_spatial);
  int x = GraphBuilder::kInput;
  for (int w : widths) {
    for (int k = 0; k < per_stage; ++k) x = b.relu(b.batch_norm(b.conv(x, w, 3, 1, 1)));
    x = b.max_pool(x, 2, 2);
  }
  b.fc(b.global_avg_pool(x), classes);
  return b.build();
}

/// Six-layer chain: conv(3->8) relu conv(8->8) relu gap fc(8->10).
inline ArchGraph toy_chain6() {
  GraphBuilder b("toy-chain6", 3, 8);
  int x = b.relu(b.conv(GraphBuilder::kInput, 8, 3, 1, 1));
  x = b.relu(b.conv(x, 8, 3, 1, 1));
  b.fc(b.global_avg_pool(x), 10);
  return b.build();
}

}  // namespace esnac
