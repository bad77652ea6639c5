#pragma once

// Parameterized layers built on the autodiff graph.  Parameters live in a
// name -> matrix map; a layer is addressed by its name prefix and pulls its
// tensors out of the graph with Graph::parameter.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "essaylens/autodiff.hpp"
#include "essaylens/graph.hpp"
#include "essaylens/rng.hpp"

namespace essaylens::nn {

using ad::Expr;
using ad::Graph;

using Parameters = std::map<std::string, MatrixXd>;

enum class Activation { identity, tanh, sigmoid, relu, softmax };

Index parameter_count(const Parameters& params);

// -- initialization ---------------------------------------------------------

/// weight: out x in (Glorot uniform), bias: 1 x out (zeros).
void init_dense(Parameters& params, const std::string& prefix, Index in, Index out, CounterRng& rng);
/// weight only.
void init_linear(Parameters& params, const std::string& prefix, Index in, Index out, CounterRng& rng);

/// Packed gate layout [input, forget, candidate, output]:
/// input_weight 4H x in, hidden_weight 4H x H, bias 1 x 4H (forget bias 1).
void init_lstm(Parameters& params, const std::string& prefix, Index in, Index hidden, CounterRng& rng);

/// gain 1 x d (ones), bias 1 x d (zeros).
void init_layer_norm(Parameters& params, const std::string& prefix, Index d);

struct MhaConfig {
  Index d_model = 512;
  Index n_heads = 8;
  Index d_ff = 2048;
  bool feed_forward = true;
  /// Residual connection + layer norm around each sublayer.
  bool add_and_norm = true;
  double layer_norm_epsilon = 1e-6;

  Index head_width() const { return d_model / n_heads; }
};

/// Throws invalid_spec when d_model is not divisible by n_heads.
void validate(const MhaConfig& cfg);

void init_mha(Parameters& params, const std::string& prefix, const MhaConfig& cfg, CounterRng& rng);

/// weight: d x d bilinear form for query^T W key.
void init_luong(Parameters& params, const std::string& prefix, Index d, CounterRng& rng);

/// Sinusoidal position table, rows = positions.
template <typename S>
Matrix<S> sinusoidal_encoding(Index positions, Index d) {
  Matrix<S> pe(positions, d);
  for (Index p = 0; p < positions; ++p) {
    for (Index i = 0; i < d; ++i) {
      const double angle = static_cast<double>(p) /
                           std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe(p, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

/// Binds every parameter in `params` (cast to S) for evaluation.
template <typename S>
ad::Bindings<S> bind(const Parameters& params) {
  ad::Bindings<S> b;
  for (const auto& [name, m] : params) b.emplace(name, Tensor<S>(m.template cast<S>()));
  return b;
}

// -- forward builders ---------------------------------------------------------

template <typename S>
Expr<S> activate(Expr<S> x, Activation act) {
  switch (act) {
    case Activation::identity: return x;
    case Activation::tanh: return ad::tanh(x);
    case Activation::sigmoid: return ad::sigmoid(x);
    case Activation::relu: return ad::relu(x);
    case Activation::softmax: return ad::softmax(x);
  }
  return x;
}

/// x W^T without a bias term.
template <typename S>
Expr<S> linear(Graph<S>& g, const std::string& prefix, Expr<S> x) {
  return ad::matmul(x, g.parameter(prefix + ".weight"), true);
}

/// activation(x W^T + b) applied to each row of x.
template <typename S>
Expr<S> dense(Graph<S>& g, const std::string& prefix, Expr<S> x, Activation act = Activation::identity) {
  auto w = g.parameter(prefix + ".weight");
  auto b = g.parameter(prefix + ".bias");
  return activate(ad::matmul(x, w, true) + b, act);
}

template <typename S>
struct LstmOutput {
  Expr<S> states;   // T x H, one row per position
  Expr<S> final_h;  // 1 x H
  Expr<S> final_c;  // 1 x H
};

/// Standard LSTM recurrence over the rows of `seq` (T = mask.size()).  Masked
/// positions copy the previous state through unchanged; with `reverse` the
/// recurrence runs from the last position to the first.
template <typename S>
LstmOutput<S> lstm(Graph<S>& g, const std::string& prefix, Expr<S> seq, Index hidden,
                   const std::vector<bool>& mask, bool reverse = false) {
  const Index steps = static_cast<Index>(mask.size());
  const Matrix<S> zeros = Matrix<S>::Zero(1, hidden);
  Expr<S> h = g.constant(zeros);
  Expr<S> c = g.constant(zeros);
  if (steps == 0) return {g.constant(Matrix<S>::Zero(0, hidden)), h, c};

  auto w_in = g.parameter(prefix + ".input_weight");
  auto w_hid = g.parameter(prefix + ".hidden_weight");
  auto bias = g.parameter(prefix + ".bias");
  auto projected = ad::matmul(seq, w_in, true) + bias;  // T x 4H, all steps at once

  std::vector<Expr<S>> out(static_cast<std::size_t>(steps));
  bool fresh = true;
  for (Index k = 0; k < steps; ++k) {
    const Index t = reverse ? steps - 1 - k : k;
    if (mask[static_cast<std::size_t>(t)]) {
      auto z = ad::row(projected, t);
      if (!fresh) z = z + ad::matmul(h, w_hid, true);
      auto in_gate = ad::sigmoid(ad::cols(z, 0, hidden));
      auto forget = ad::sigmoid(ad::cols(z, hidden, hidden));
      auto cand = ad::tanh(ad::cols(z, 2 * hidden, hidden));
      auto out_gate = ad::sigmoid(ad::cols(z, 3 * hidden, hidden));
      c = fresh ? in_gate * cand : forget * c + in_gate * cand;
      h = out_gate * ad::tanh(c);
      fresh = false;
    }
    out[static_cast<std::size_t>(t)] = h;
  }
  return {ad::concat(out, ad::Axis::rows), h, c};
}

template <typename S>
struct BiLstmOutput {
  Expr<S> states;    // T x 2H: [forward | backward] per position
  Expr<S> forward;   // final forward state (after the last valid position)
  Expr<S> backward;  // final backward state (after the first valid position)
};

template <typename S>
BiLstmOutput<S> bilstm(Graph<S>& g, const std::string& fwd_prefix, const std::string& bwd_prefix, Expr<S> seq,
                       Index hidden, const std::vector<bool>& mask) {
  auto f = lstm(g, fwd_prefix, seq, hidden, mask, false);
  auto b = lstm(g, bwd_prefix, seq, hidden, mask, true);
  return {ad::concat(std::vector<Expr<S>>{f.states, b.states}, ad::Axis::cols), f.final_h, b.final_h};
}

/// Affine layer norm over each row.
template <typename S>
Expr<S> layer_norm(Graph<S>& g, const std::string& prefix, Expr<S> x, double epsilon) {
  return ad::layer_norm(x, static_cast<S>(epsilon)) * g.parameter(prefix + ".gain") +
         g.parameter(prefix + ".bias");
}

/// One transformer encoder block over a T x d_model sequence.  Masked key
/// positions receive exactly zero attention.  Per-head attention matrices are
/// appended to `attention` when given.
template <typename S>
Expr<S> mha_block(Graph<S>& g, const std::string& prefix, const MhaConfig& cfg, Expr<S> x,
                  const std::vector<bool>& mask, ad::DropoutContext& drop,
                  std::vector<Expr<S>>* attention = nullptr) {
  validate(cfg);
  const Index steps = static_cast<Index>(mask.size());
  const Index dk = cfg.head_width();
  const S scale = S(1) / std::sqrt(static_cast<S>(dk));

  auto q = dense(g, prefix + ".query", x);
  // A key bias only shifts every score in a row by the same amount, which the
  // softmax ignores, so keys have no bias.
  auto k = linear(g, prefix + ".key", x);
  auto v = dense(g, prefix + ".value", x);
  std::vector<Expr<S>> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (Index h = 0; h < cfg.n_heads; ++h) {
    auto qh = ad::cols(q, h * dk, dk);
    auto kh = ad::cols(k, h * dk, dk);
    auto vh = ad::cols(v, h * dk, dk);
    auto weights = ad::softmax(ad::matmul(qh, kh, true) * scale, mask);
    if (attention) attention->push_back(weights);
    heads.push_back(ad::matmul(weights, vh));
  }
  auto joined = cfg.n_heads == 1 ? heads.front() : ad::concat(heads, ad::Axis::cols);
  auto attended = ad::dropout(dense(g, prefix + ".output", joined), steps, cfg.d_model, drop);
  auto y = cfg.add_and_norm ? layer_norm(g, prefix + ".norm1", x + attended, cfg.layer_norm_epsilon) : attended;
  if (!cfg.feed_forward) return y;

  auto inner = dense(g, prefix + ".ff1", y, Activation::relu);
  auto ff = ad::dropout(dense(g, prefix + ".ff2", inner), steps, cfg.d_model, drop);
  return cfg.add_and_norm ? layer_norm(g, prefix + ".norm2", y + ff, cfg.layer_norm_epsilon) : ff;
}

template <typename S>
struct LuongOutput {
  Expr<S> context;  // 1 x d
  Expr<S> weights;  // 1 x T
};

/// Multiplicative attention: s_i = query^T W key_i, weights = softmax(s),
/// context = sum_i weights_i key_i.
template <typename S>
LuongOutput<S> luong_attention(Expr<S> query, Expr<S> keys, Expr<S> weight, const std::vector<bool>& mask = {}) {
  auto scores = ad::matmul(ad::matmul(query, weight), keys, true);
  auto weights = ad::softmax(scores, mask);
  return {ad::matmul(weights, keys), weights};
}

template <typename S>
LuongOutput<S> luong_attention(Graph<S>& g, const std::string& prefix, Expr<S> query, Expr<S> keys,
                               const std::vector<bool>& mask = {}) {
  return luong_attention(query, keys, g.parameter(prefix + ".weight"), mask);
}

}  // namespace essaylens::nn
