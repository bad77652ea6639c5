#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "essaylens/tensor.hpp"

namespace essaylens::optim {

using ParameterSet = std::map<std::string, MatrixXd>;

enum class Method { adam, adamax };

struct AdamConfig {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;  // Adam denominator
  double u_floor = 1e-12; // AdaMax denominator floor
};

/// Moment state for one model.  For Adam `second` holds v; for AdaMax it holds
/// the infinity-norm accumulator u.
struct OptimState {
  AdamConfig config;
  std::int64_t step = 0;
  ParameterSet first;
  ParameterSet second;
};

/// One bias-corrected Adam update.  `alpha`, when given, overrides
/// config.alpha (used by the learning-rate schedule).  Parameters without a gradient entry
/// are treated as having a zero gradient.
void adam_step(OptimState& state, ParameterSet& params, const ParameterSet& grads, std::optional<double> alpha = std::nullopt);

/// m_t = b1 m + (1 - b1) g;  u_t = max(b2 u, |g|);
/// theta -= (alpha / (1 - b1^t)) * m_t / max(u_t, floor)
void adamax_step(OptimState& state, ParameterSet& params, const ParameterSet& grads, std::optional<double> alpha = std::nullopt);

void step(Method method, OptimState& state, ParameterSet& params, const ParameterSet& grads, std::optional<double> alpha = std::nullopt);

struct SchedulerConfig {
  std::int64_t d_model = 512;
  std::int64_t warmup_steps = 4000;
};

/// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
double lr_at(const SchedulerConfig& cfg, std::int64_t step_num);

}  // namespace essaylens::optim
