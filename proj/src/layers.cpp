#include "essaylens/layers.hpp"

#include <cmath>

namespace essaylens::nn {

namespace {

MatrixXd glorot(Index rows, Index cols, CounterRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

}  // namespace

Index parameter_count(const Parameters& params) {
  Index n = 0;
  for (const auto& [_, m] : params) n += m.size();
  return n;
}

void init_dense(Parameters& params, const std::string& prefix, Index in, Index out, CounterRng& rng) {
  params[prefix + ".weight"] = glorot(out, in, rng);
  params[prefix + ".bias"] = MatrixXd::Zero(1, out);
}

void init_linear(Parameters& params, const std::string& prefix, Index in, Index out, CounterRng& rng) {
  params[prefix + ".weight"] = glorot(out, in, rng);
}

void init_lstm(Parameters& params, const std::string& prefix, Index in, Index hidden, CounterRng& rng) {
  params[prefix + ".input_weight"] = glorot(4 * hidden, in, rng);
  params[prefix + ".hidden_weight"] = glorot(4 * hidden, hidden, rng);
  MatrixXd bias = MatrixXd::Zero(1, 4 * hidden);
  bias.middleCols(hidden, hidden).setOnes();
  params[prefix + ".bias"] = bias;
}

void init_layer_norm(Parameters& params, const std::string& prefix, Index d) {
  params[prefix + ".gain"] = MatrixXd::Ones(1, d);
  params[prefix + ".bias"] = MatrixXd::Zero(1, d);
}

void validate(const MhaConfig& cfg) {
  if (cfg.n_heads <= 0 || cfg.d_model <= 0 || cfg.d_model % cfg.n_heads != 0)
    fail(ErrorCode::invalid_spec, "d_model " + std::to_string(cfg.d_model) + " is not divisible by " +
                                      std::to_string(cfg.n_heads) + " attention heads");
}

void init_mha(Parameters& params, const std::string& prefix, const MhaConfig& cfg, CounterRng& rng) {
  validate(cfg);
  init_dense(params, prefix + ".query", cfg.d_model, cfg.d_model, rng);
  init_linear(params, prefix + ".key", cfg.d_model, cfg.d_model, rng);
  init_dense(params, prefix + ".value", cfg.d_model, cfg.d_model, rng);
  init_dense(params, prefix + ".output", cfg.d_model, cfg.d_model, rng);
  if (cfg.add_and_norm) init_layer_norm(params, prefix + ".norm1", cfg.d_model);
  if (cfg.feed_forward) {
    init_dense(params, prefix + ".ff1", cfg.d_model, cfg.d_ff, rng);
    init_dense(params, prefix + ".ff2", cfg.d_ff, cfg.d_model, rng);
    if (cfg.add_and_norm) init_layer_norm(params, prefix + ".norm2", cfg.d_model);
  }
}

void init_luong(Parameters& params, const std::string& prefix, Index d, CounterRng& rng) {
  params[prefix + ".weight"] = glorot(d, d, rng);
}

}  // namespace essaylens::nn
