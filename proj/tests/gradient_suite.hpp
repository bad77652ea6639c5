#pragma once

// Central-difference gradient checks shared by the unit tests and the
// acceptance binary: every autodiff primitive, every layer, every loss.

#include <functional>
#include <string>
#include <vector>

#include "essaylens/autodiff.hpp"
#include "essaylens/layers.hpp"
#include "essaylens/objectives.hpp"
#include "support.hpp"

namespace essaylens::testing::gradients {

using ad::Axis;
using G = ad::Graph<double>;
using E = ad::Expr<double>;

enum class Domain { any, positive, away_from_zero };

struct Case {
  std::string name;
  Index ar, ac, br, bc;  // b unused when br == 0
  Domain da = Domain::any, db = Domain::any;
  std::function<E(G&, E, E)> build;
  bool separate_ab = false;  // keep |a - b| large (max)
};

inline MatrixXd sample(CounterRng& rng, Index r, Index c, Domain d) {
  MatrixXd m(r, c);
  for (Index i = 0; i < m.size(); ++i) {
    double v = rng.normal();
    if (d == Domain::positive) v = 0.5 + std::abs(v);
    if (d == Domain::away_from_zero)
      while (std::abs(v) < 1e-2) v = rng.normal();
    m.data()[i] = v;
  }
  return m;
}

inline double check_case(const Case& c, std::uint64_t seed) {
  CounterRng rng(seed);
  G g;
  E a = g.input("a");
  E b = c.br > 0 ? g.input("b") : E{};
  E out = c.build(g, a, b);

  ad::Bindings<double> bind;
  bind["a"] = sample(rng, c.ar, c.ac, c.da);
  if (c.br > 0) {
    MatrixXd bm = sample(rng, c.br, c.bc, c.db);
    if (c.separate_ab)
      for (Index i = 0; i < bm.size(); ++i)
        while (std::abs(bm.data()[i] - bind["a"].matrix().data()[i]) < 1e-2) bm.data()[i] = rng.normal();
    bind["b"] = bm;
  }
  const auto trace = ad::forward(g, bind);
  const MatrixXd& y = trace[out.id];
  // a random weighting keeps identities like sum(softmax) = 1 from hiding errors
  E loss = ad::sum(out * g.constant(testing::random_matrix(rng, y.rows(), y.cols())));
  return ad::check_gradients(g, bind, loss, 1e-5).max_relative_error();
}

inline std::vector<Case> primitive_cases() {
  using std::vector;
  return {
      {"add", 3, 4, 3, 4, Domain::any, Domain::any, [](G&, E a, E b) { return a + b; }},
      {"add row broadcast", 3, 4, 1, 4, Domain::any, Domain::any, [](G&, E a, E b) { return a + b; }},
      {"add column broadcast", 3, 4, 3, 1, Domain::any, Domain::any, [](G&, E a, E b) { return a + b; }},
      {"add scalar broadcast", 3, 4, 1, 1, Domain::any, Domain::any, [](G&, E a, E b) { return a + b; }},
      {"sub", 3, 4, 1, 4, Domain::any, Domain::any, [](G&, E a, E b) { return a - b; }},
      {"mul", 3, 4, 3, 4, Domain::any, Domain::any, [](G&, E a, E b) { return a * b; }},
      {"mul broadcast", 3, 4, 3, 1, Domain::any, Domain::any, [](G&, E a, E b) { return a * b; }},
      {"div", 3, 4, 3, 4, Domain::any, Domain::positive, [](G&, E a, E b) { return a / b; }},
      {"div broadcast", 3, 4, 1, 4, Domain::any, Domain::positive, [](G&, E a, E b) { return a / b; }},
      {"matmul", 3, 4, 4, 2, Domain::any, Domain::any, [](G&, E a, E b) { return ad::matmul(a, b); }},
      {"matmul transposed rhs", 3, 4, 2, 4, Domain::any, Domain::any,
       [](G&, E a, E b) { return ad::matmul(a, b, true); }},
      {"transpose", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::transpose(a); }},
      {"scale", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return a * 2.5; }},
      {"add_scalar", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return a + 1.5; }},
      {"neg", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return -a; }},
      {"tanh", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::tanh(a); }},
      {"sigmoid", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::sigmoid(a); }},
      {"relu", 3, 4, 0, 0, Domain::away_from_zero, Domain::any, [](G&, E a, E) { return ad::relu(a); }},
      {"exp", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::exp(a); }},
      {"log", 3, 4, 0, 0, Domain::positive, Domain::any, [](G&, E a, E) { return ad::log(a); }},
      {"sqrt", 3, 4, 0, 0, Domain::positive, Domain::any, [](G&, E a, E) { return ad::sqrt(a); }},
      {"max", 3, 4, 3, 4, Domain::any, Domain::any, [](G&, E a, E b) { return ad::max(a, b); }, true},
      {"softmax", 3, 5, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::softmax(a); }},
      {"masked softmax", 3, 5, 0, 0, Domain::any, Domain::any,
       [](G&, E a, E) { return ad::softmax(a, {true, false, true, true, false}); }},
      {"concat rows", 3, 4, 2, 4, Domain::any, Domain::any,
       [](G&, E a, E b) { return ad::concat(std::vector<E>{a, b, a}, Axis::rows); }},
      {"concat cols", 3, 4, 3, 2, Domain::any, Domain::any,
       [](G&, E a, E b) { return ad::concat(std::vector<E>{b, a}, Axis::cols); }},
      {"slice rows", 4, 3, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::rows(a, 1, 2); }},
      {"slice cols", 3, 5, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::cols(a, 2, 3); }},
      {"sum all", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::sum(a * a); }},
      {"sum rows", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::sum(a, Axis::rows); }},
      {"sum cols", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::sum(a, Axis::cols); }},
      {"mean all", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::mean(a * a); }},
      {"mean rows", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::mean(a, Axis::rows); }},
      {"mean cols", 3, 4, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::mean(a, Axis::cols); }},
      {"layer_norm", 3, 6, 0, 0, Domain::any, Domain::any, [](G&, E a, E) { return ad::layer_norm(a, 1e-6); }},
      {"composite", 3, 4, 4, 4, Domain::any, Domain::any,
       [](G&, E a, E b) { return ad::tanh(ad::matmul(a, b)) * ad::sigmoid(a) + ad::exp(a * 0.1); }},
  };
}


inline void perturb(nn::Parameters& p, CounterRng& rng, double sd = 0.1) {
  for (auto& [_, m] : p) m = m.unaryExpr([&](double v) { return v + rng.normal(0.0, sd); });
}

inline std::vector<bool> prefix_mask(Index valid, Index total) {
  std::vector<bool> m(static_cast<std::size_t>(total), false);
  for (Index i = 0; i < valid; ++i) m[static_cast<std::size_t>(i)] = true;
  return m;
}

/// Randomly weighted sum of `out`, checked over every parameter and "x".
inline double layer_check(G& g, const nn::Parameters& params, const MatrixXd& x, E out, CounterRng& rng) {
  auto bind = nn::bind<double>(params);
  bind["x"] = x;
  const MatrixXd y = ad::forward(g, bind)[out.id];
  E loss = ad::sum(out * g.constant(random_matrix(rng, y.rows(), y.cols())));
  return ad::check_gradients(g, bind, loss, 1e-5).max_relative_error();
}

struct Named {
  std::string name;
  double error = 0.0;
};

/// One perturbed instance of each layer type.
inline std::vector<Named> layer_checks(CounterRng& rng) {
  std::vector<Named> out;
  for (auto act : {nn::Activation::identity, nn::Activation::tanh, nn::Activation::sigmoid,
                   nn::Activation::softmax}) {
    nn::Parameters p;
    nn::init_dense(p, "d", 4, 3, rng);
    perturb(p, rng);
    G g;
    auto y = nn::dense(g, "d", g.input("x"), act);
    out.push_back({"dense", layer_check(g, p, random_matrix(rng, 3, 4), y, rng)});
  }
  for (bool reverse : {false, true}) {
    nn::Parameters p;
    nn::init_lstm(p, "l", 4, 3, rng);
    perturb(p, rng);
    G g;
    auto o = nn::lstm(g, "l", g.input("x"), 3, prefix_mask(3, 4), reverse);
    auto all = ad::concat(std::vector<E>{o.states, o.final_h, o.final_c}, Axis::rows);
    out.push_back({reverse ? "lstm reverse" : "lstm", layer_check(g, p, random_matrix(rng, 4, 4), all, rng)});
  }
  {
    nn::Parameters p;
    nn::init_lstm(p, "f", 4, 2, rng);
    nn::init_lstm(p, "b", 4, 2, rng);
    perturb(p, rng);
    G g;
    auto o = nn::bilstm(g, "f", "b", g.input("x"), 2, prefix_mask(3, 3));
    auto ends = ad::concat(std::vector<E>{o.forward, o.backward}, Axis::cols);
    out.push_back({"bilstm", layer_check(g, p, random_matrix(rng, 3, 4),
                                         ad::concat(std::vector<E>{o.states, ends}, Axis::rows), rng)});
  }
  {
    nn::Parameters p;
    nn::init_layer_norm(p, "n", 5);
    perturb(p, rng);
    G g;
    auto y = nn::layer_norm(g, "n", g.input("x"), 1e-6);
    out.push_back({"layer_norm", layer_check(g, p, random_matrix(rng, 3, 5), y, rng)});
  }
  {
    nn::MhaConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    nn::Parameters p;
    nn::init_mha(p, "m", cfg, rng);
    perturb(p, rng);
    G g;
    ad::DropoutContext drop;
    auto y = nn::mha_block(g, "m", cfg, g.input("x"), prefix_mask(3, 4), drop);
    out.push_back({"mha_block", layer_check(g, p, random_matrix(rng, 4, 8), ad::rows(y, 0, 3), rng)});
  }
  {
    nn::Parameters p;
    nn::init_luong(p, "a", 4, rng);
    perturb(p, rng);
    G g;
    auto x = g.input("x");
    auto o = nn::luong_attention(g, "a", ad::row(x, 0), x, prefix_mask(3, 4));
    out.push_back({"luong", layer_check(g, p, random_matrix(rng, 4, 4),
                                        ad::concat(std::vector<E>{o.context, ad::cols(o.weights, 0, 3)}, Axis::cols),
                                        rng)});
  }
  return out;
}

/// Kappa, cross-entropy, MSE and their combination on softmax/sigmoid heads.
inline std::vector<Named> loss_checks(CounterRng& rng) {
  std::vector<Named> out;
  const std::vector<int> y = {0, 2, 1, 2};
  MatrixXd target(4, 1);
  for (Index i = 0; i < 4; ++i) target(i, 0) = rng.uniform();
  for (double s : {0.0, 0.1}) {
    G g;
    auto z = g.input("z");
    auto p = ad::softmax(z);
    auto kappa = objectives::weighted_kappa_loss(p, y, 3, s);
    auto cce = objectives::categorical_cross_entropy(p, objectives::smoothed_targets(y, 3, s));
    auto mse = objectives::mean_squared_error(ad::sigmoid(ad::cols(z, 0, 1)), target);
    auto total = kappa * 0.6 + mse * 0.4;
    ad::Bindings<double> b{{"z", random_matrix(rng, 4, 3)}};
    const char* names[] = {"kappa", "cce", "mse", "combined"};
    int k = 0;
    for (auto loss : {kappa, cce, mse, total})
      out.push_back({names[k++], ad::check_gradients(g, b, loss, 1e-5).max_relative_error()});
  }
  return out;
}

}  // namespace essaylens::testing::gradients
