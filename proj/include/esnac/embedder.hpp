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

// Bidirectional LSTM sequence embedder.
//
// Each direction runs a standard LSTM cell
//
//   z = W x_t + U h_{t-1} + b,   z = [z_i; z_f; z_o; z_g]
//   i = sigmoid(z_i), f = sigmoid(z_f), o = sigmoid(z_o), g = tanh(z_g)
//   c_t = f * c_{t-1} + i * g,   h_t = o * tanh(c_t)
//
// over the layer vectors (forward: first to last, backward: last to first).
// The per-step state is [h_fwd; h_bwd] (2H). The embedding is the mean of the
// per-step states divided by its Euclidean norm. Gradients are exact reverse
// mode through normalization, pooling and both recurrences.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "esnac/common.hpp"
#include "esnac/encode.hpp"

namespace esnac {

/// Pooled vectors with a smaller norm map to the first basis vector.
inline constexpr double kDegenerateNorm = 1e-12;

struct LstmCell {
  Eigen::MatrixXd w_input;   // 4H x D, row blocks: input, forget, output, candidate
  Eigen::MatrixXd w_hidden;  // 4H x H
  Eigen::VectorXd bias;      // 4H

  static LstmCell zeros(int hidden, int input) {
    return {Eigen::MatrixXd::Zero(4 * hidden, input), Eigen::MatrixXd::Zero(4 * hidden, hidden),
            Eigen::VectorXd::Zero(4 * hidden)};
  }
};

struct EmbedderParams {
  int hidden_size = 0;
  int input_size = 0;
  LstmCell forward;
  LstmCell backward;

  static EmbedderParams zeros(int hidden, int input) {
    return {hidden, input, LstmCell::zeros(hidden, input), LstmCell::zeros(hidden, input)};
  }
  EmbedderParams zeros_like() const { return zeros(hidden_size, input_size); }

  int embedding_size() const { return 2 * hidden_size; }

  std::size_t num_params() const {
    const auto h = static_cast<std::size_t>(hidden_size), d = static_cast<std::size_t>(input_size);
    return 2 * (4 * (d * h + h * h + h));
  }

  /// Visits every tensor in serialization order.
  template <class F>
  void for_each_tensor(F&& f) {
    f("forward.w_input", forward.w_input);
    f("forward.w_hidden", forward.w_hidden);
    f("forward.bias", forward.bias);
    f("backward.w_input", backward.w_input);
    f("backward.w_hidden", backward.w_hidden);
    f("backward.bias", backward.bias);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<EmbedderParams*>(this)->for_each_tensor([&](const char* name, auto& t) {
      f(name, static_cast<const std::remove_reference_t<decltype(t)>&>(t));
    });
  }

  /// Flat row-major copy of all weights.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(num_params()));
    Eigen::Index k = 0;
    for_each_tensor([&](const char*, const auto& t) {
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) out[k++] = t(r, c);
    });
    return out;
  }

  void unflatten(const Eigen::VectorXd& flat) {
    if (flat.size() != static_cast<Eigen::Index>(num_params()))
      throw DimensionMismatch("flat weight vector has the wrong length");
    Eigen::Index k = 0;
    for_each_tensor([&](const char*, auto& t) {
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = flat[k++];
    });
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const char*, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

  EmbedderParams& operator+=(const EmbedderParams& o) {
    forward.w_input += o.forward.w_input;
    forward.w_hidden += o.forward.w_hidden;
    forward.bias += o.forward.bias;
    backward.w_input += o.backward.w_input;
    backward.w_hidden += o.backward.w_hidden;
    backward.bias += o.backward.bias;
    return *this;
  }

  bool operator==(const EmbedderParams& o) const {
    return hidden_size == o.hidden_size && input_size == o.input_size && flatten() == o.flatten();
  }
};

using Embedding = Eigen::VectorXd;

/// Uniform weights in [-1/sqrt(H), 1/sqrt(H)], zero biases except the forget
/// gate's, which start at 1.
inline EmbedderParams init_params(std::uint64_t seed, int hidden_size, int input_size) {
  if (hidden_size < 1 || input_size < 1) throw DimensionMismatch("embedder sizes must be positive");
  EmbedderParams p = EmbedderParams::zeros(hidden_size, input_size);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  auto fill = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
  };
  for (LstmCell* cell : {&p.forward, &p.backward}) {
    fill(cell->w_input);
    fill(cell->w_hidden);
    cell->bias.segment(hidden_size, hidden_size).setOnes();
  }
  return p;
}

/// Layer vectors as a D x T matrix, one column per layer.
inline Eigen::MatrixXd to_matrix(const SequenceEncoding& s) {
  const auto t = static_cast<Eigen::Index>(s.layers.size());
  Eigen::MatrixXd x(s.width(), t);
  for (Eigen::Index j = 0; j < t; ++j) {
    const auto& row = s.layers[static_cast<std::size_t>(j)];
    if (static_cast<Eigen::Index>(row.size()) != x.rows()) throw DimensionMismatch("ragged sequence encoding");
    x.col(j) = Eigen::Map<const Eigen::VectorXd>(row.data(), x.rows());
  }
  return x;
}

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct DirectionTape {
  Eigen::MatrixXd inputs;  // D x T, columns in processing order
  Eigen::MatrixXd gates;   // 4H x T, post-activation
  Eigen::MatrixXd cells;   // H x (T + 1), column 0 is the zero initial state
  Eigen::MatrixXd hidden;  // H x (T + 1)
};

inline void run_direction(const LstmCell& cell, const Eigen::MatrixXd& x, bool reverse, DirectionTape& tape) {
  const Eigen::Index steps = x.cols();
  const Eigen::Index h = cell.w_hidden.cols();
  tape.inputs = reverse ? Eigen::MatrixXd(x.rowwise().reverse()) : x;
  tape.gates.resize(4 * h, steps);
  tape.cells.setZero(h, steps + 1);
  tape.hidden.setZero(h, steps + 1);
  // Input projections for every step at once.
  Eigen::MatrixXd z = cell.w_input * tape.inputs;
  z.colwise() += cell.bias;
  for (Eigen::Index t = 0; t < steps; ++t) {
    auto zt = z.col(t);
    zt.noalias() += cell.w_hidden * tape.hidden.col(t);
    auto gt = tape.gates.col(t);
    for (Eigen::Index k = 0; k < 3 * h; ++k) gt[k] = sigmoid(zt[k]);
    for (Eigen::Index k = 3 * h; k < 4 * h; ++k) gt[k] = std::tanh(zt[k]);
    const auto i = gt.segment(0, h).array();
    const auto f = gt.segment(h, h).array();
    const auto o = gt.segment(2 * h, h).array();
    const auto g = gt.segment(3 * h, h).array();
    tape.cells.col(t + 1).array() = f * tape.cells.col(t).array() + i * g;
    tape.hidden.col(t + 1).array() = o * tape.cells.col(t + 1).array().tanh();
  }
}

/// Accumulates into `grad` the gradient of sum_t <dh_each, h_t>.
inline void backprop_direction(const LstmCell& cell, const DirectionTape& tape, const Eigen::VectorXd& dh_each,
                               LstmCell& grad) {
  const Eigen::Index steps = tape.inputs.cols();
  const Eigen::Index h = cell.w_hidden.cols();
  Eigen::MatrixXd dz(4 * h, steps);
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd dh(h), dc(h);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const auto gt = tape.gates.col(t);
    const auto i = gt.segment(0, h).array();
    const auto f = gt.segment(h, h).array();
    const auto o = gt.segment(2 * h, h).array();
    const auto g = gt.segment(3 * h, h).array();
    const Eigen::ArrayXd tc = tape.cells.col(t + 1).array().tanh();
    dh = dh_each + dh_next;
    dc.array() = dh.array() * o * (1.0 - tc.square()) + dc_next.array();
    auto dzt = dz.col(t);
    dzt.segment(0, h).array() = dc.array() * g * i * (1.0 - i);
    dzt.segment(h, h).array() = dc.array() * tape.cells.col(t).array() * f * (1.0 - f);
    dzt.segment(2 * h, h).array() = dh.array() * tc * o * (1.0 - o);
    dzt.segment(3 * h, h).array() = dc.array() * i * (1.0 - g.square());
    dh_next.noalias() = cell.w_hidden.transpose() * dzt;
    dc_next.array() = dc.array() * f;
  }
  grad.w_input.noalias() += dz * tape.inputs.transpose();
  grad.w_hidden.noalias() += dz * tape.hidden.leftCols(steps).transpose();
  grad.bias += dz.rowwise().sum();
}

}  // namespace detail

/// Forward-pass state kept for the reverse pass.
struct EmbedTape {
  detail::DirectionTape fwd;
  detail::DirectionTape bwd;
  Eigen::VectorXd pooled;
  double norm = 0.0;
  bool degenerate = false;
  Embedding output;
};

inline Embedding embed(const EmbedderParams& params, const Eigen::MatrixXd& x, EmbedTape& tape) {
  if (x.cols() < 1) throw DimensionMismatch("cannot embed an empty sequence");
  if (x.rows() != params.input_size)
    throw DimensionMismatch("layer vectors have width " + std::to_string(x.rows()) + ", embedder expects " +
                            std::to_string(params.input_size));
  const int h = params.hidden_size;
  detail::run_direction(params.forward, x, false, tape.fwd);
  detail::run_direction(params.backward, x, true, tape.bwd);
  const double steps = static_cast<double>(x.cols());
  tape.pooled.resize(2 * h);
  tape.pooled.head(h) = tape.fwd.hidden.rightCols(x.cols()).rowwise().sum() / steps;
  tape.pooled.tail(h) = tape.bwd.hidden.rightCols(x.cols()).rowwise().sum() / steps;
  tape.norm = tape.pooled.norm();
  tape.degenerate = tape.norm < kDegenerateNorm;  // NaN propagates
  if (tape.degenerate) {
    tape.output = Embedding::Zero(2 * h);
    tape.output[0] = 1.0;
  } else {
    tape.output = tape.pooled / tape.norm;
  }
  return tape.output;
}

inline Embedding embed(const EmbedderParams& params, const SequenceEncoding& s) {
  EmbedTape tape;
  return embed(params, to_matrix(s), tape);
}

/// Adds to `grad` the gradient of <embedding, grad_out> recorded in `tape`.
inline void embed_backward(const EmbedderParams& params, const EmbedTape& tape, const Eigen::VectorXd& grad_out,
                           EmbedderParams& grad) {
  const int h = params.hidden_size;
  if (grad_out.size() != 2 * h) throw DimensionMismatch("grad_out must have length 2H");
  if (tape.degenerate) return;
  const Eigen::VectorXd& e = tape.output;
  const Eigen::VectorXd d_pooled = (grad_out - e * e.dot(grad_out)) / tape.norm;
  const double steps = static_cast<double>(tape.fwd.inputs.cols());
  detail::backprop_direction(params.forward, tape.fwd, d_pooled.head(h) / steps, grad.forward);
  detail::backprop_direction(params.backward, tape.bwd, d_pooled.tail(h) / steps, grad.backward);
}

/// Gradient of <embed(params, s), grad_out> with respect to every weight.
inline EmbedderParams embed_backward(const EmbedderParams& params, const SequenceEncoding& s,
                                     const Eigen::VectorXd& grad_out) {
  EmbedTape tape;
  embed(params, to_matrix(s), tape);
  EmbedderParams grad = params.zeros_like();
  embed_backward(params, tape, grad_out, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Serialization: a JSON document with a format tag, version, shape header and
// one row-major payload per tensor.

inline constexpr int kEmbedderFormatVersion = 1;

inline nlohmann::json to_json(const EmbedderParams& p) {
  nlohmann::json doc;
  doc["format"] = "esnac-embedder";
  doc["version"] = kEmbedderFormatVersion;
  doc["hidden_size"] = p.hidden_size;
  doc["input_size"] = p.input_size;
  auto& tensors = doc["tensors"] = nlohmann::json::array();
  p.for_each_tensor([&](const char* name, const auto& t) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t.size()));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) data.push_back(t(r, c));
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(data)}});
  });
  return doc;
}

inline EmbedderParams embedder_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format") != "esnac-embedder") throw Error("not an embedder weight file");
    if (doc.at("version") != kEmbedderFormatVersion) throw Error("unsupported embedder file version");
    EmbedderParams p = EmbedderParams::zeros(doc.at("hidden_size").get<int>(), doc.at("input_size").get<int>());
    const auto& tensors = doc.at("tensors");
    std::size_t k = 0;
    p.for_each_tensor([&](const char* name, auto& t) {
      const auto& jt = tensors.at(k++);
      if (jt.at("name") != name || jt.at("rows") != t.rows() || jt.at("cols") != t.cols())
        throw DimensionMismatch(std::string("tensor '") + name + "' has an unexpected name or shape");
      const auto data = jt.at("data").get<std::vector<double>>();
      if (data.size() != static_cast<std::size_t>(t.size()))
        throw DimensionMismatch(std::string("tensor '") + name + "' payload has the wrong length");
      std::size_t j = 0;
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = data[j++];
    });
    if (!p.all_finite()) throw Error("embedder weights contain non-finite values");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed embedder weight file: ") + e.what());
  }
}

inline void save_embedder(const EmbedderParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << to_json(p).dump() << '\n';
}

inline EmbedderParams load_embedder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return embedder_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace esnac
