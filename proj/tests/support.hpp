#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "essaylens/rng.hpp"
#include "essaylens/scorers.hpp"

namespace essaylens::testing {

/// Code of the essaylens::Error thrown by f, or nullopt when nothing is thrown.
template <typename F>
std::optional<ErrorCode> error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Literal QWK: build O, E and w with explicit loops, no shortcuts.
inline double brute_force_qwk(const std::vector<int>& a, const std::vector<int>& b, int lo, int hi) {
  const int C = hi - lo + 1;
  const auto N = static_cast<double>(a.size());
  std::vector<std::vector<double>> O(C, std::vector<double>(C, 0.0));
  for (std::size_t n = 0; n < a.size(); ++n) O[a[n] - lo][b[n] - lo] += 1.0;
  std::vector<double> ra(C, 0.0), rb(C, 0.0);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      ra[i] += O[i][j];
      rb[j] += O[i][j];
    }
  double num = 0.0, den = 0.0;
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      const double w = double(i - j) * double(i - j) / (double(C - 1) * double(C - 1));
      const double E = ra[i] * rb[j] / N;
      num += w * O[i][j];
      den += w * E;
    }
  if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
  return 1.0 - num / den;
}

inline MatrixXd random_matrix(CounterRng& rng, Index r, Index c, double sd = 1.0) {
  MatrixXd m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

/// The tiny configuration every full-model gradient check runs at:
/// d_model 8, 2 heads, d_ff 8, three classes.
inline scoring::ModelSpec tiny_spec(scoring::ModelKind kind, Index input_dim = 8) {
  scoring::ModelSpec spec;
  spec.kind = kind;
  spec.hp.d_model = 8;
  spec.hp.n_heads = 2;
  spec.hp.d_ff = 8;
  spec.hp.batch_size = 3;
  spec.hp.epochs = 2;
  spec.hp.patience = 1;
  spec.hp.P = 0.6;
  spec.input_dim = input_dim;
  spec.score_min = 0;
  spec.score_max = 2;
  spec.set_id = 3;
  return spec;
}

/// Glorot init plus N(0, 0.1) noise on every entry, so no gradient sits
/// exactly at an init symmetry (zero biases, unit gains).
inline scoring::ScoreModel tiny_model(scoring::ModelKind kind, Index input_dim = 8, std::uint64_t seed = 3) {
  CounterRng rng(seed * 7919 + 5);
  const MatrixXd passage = random_matrix(rng, 2, input_dim);
  auto m = scoring::build_model(tiny_spec(kind, input_dim), seed, passage);
  for (auto& [name, p] : m.params) p = p.unaryExpr([&](double v) { return v + rng.normal(0.0, 0.1); });
  return m;
}

/// `count` essays of 1..3 sentences with scores cycling through 0..2.
inline std::vector<scoring::Example> tiny_examples(Index input_dim, std::size_t count, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<scoring::Example> out;
  for (std::size_t i = 0; i < count; ++i) {
    scoring::Example e;
    e.input.embedded = true;
    e.input.embeddings = random_matrix(rng, 1 + Index(i % 3), input_dim);
    e.input.stats = {1.0 + double(i % 3), 5.0 + double(i), 2.0, 0.5};
    e.score = int(i % 3);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<const scoring::Example*> pointers(const std::vector<scoring::Example>& v) {
  std::vector<const scoring::Example*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

/// Dataset wrapper recording every index read.
class TrackingDataset final : public scoring::Dataset {
 public:
  explicit TrackingDataset(const scoring::Dataset& inner) : inner_(inner) {}
  std::size_t size() const override { return inner_.size(); }
  const scoring::Example& at(std::size_t i) const override {
    touched_.insert(i);
    return inner_.at(i);
  }
  const std::set<std::size_t>& touched() const { return touched_; }

 private:
  const scoring::Dataset& inner_;
  mutable std::set<std::size_t> touched_;
};

}  // namespace essaylens::testing
