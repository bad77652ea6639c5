#include "essaylens/optim.hpp"

#include <algorithm>
#include <cmath>

#include "essaylens/error.hpp"

namespace essaylens::optim {

namespace {

template <typename Update>
void for_each_parameter(OptimState& state, ParameterSet& params, const ParameterSet& grads, Update update) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) continue;
    if (g.rows() != it->second.rows() || g.cols() != it->second.cols())
      fail(ErrorCode::shape_mismatch, "gradient for '" + name + "' does not match its parameter shape");
  }
  ++state.step;
  for (auto& [name, theta] : params) {
    auto& m = state.first[name];
    auto& s = state.second[name];
    if (m.size() == 0) {
      m = MatrixXd::Zero(theta.rows(), theta.cols());
      s = MatrixXd::Zero(theta.rows(), theta.cols());
    }
    auto it = grads.find(name);
    const MatrixXd g = it == grads.end() ? MatrixXd::Zero(theta.rows(), theta.cols()) : it->second;
    update(theta, m, s, g);
  }
}

}  // namespace

void adam_step(OptimState& state, ParameterSet& params, const ParameterSet& grads, std::optional<double> alpha) {
  const AdamConfig& c = state.config;
  const double lr = alpha.value_or(c.alpha);
  for_each_parameter(state, params, grads, [&](MatrixXd& theta, MatrixXd& m, MatrixXd& v, const MatrixXd& g) {
    const auto t = static_cast<double>(state.step);
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseAbs2();
    const double m_corr = 1.0 - std::pow(c.beta1, t);
    const double v_corr = 1.0 - std::pow(c.beta2, t);
    theta.array() -= lr * (m.array() / m_corr) / ((v.array() / v_corr).sqrt() + c.epsilon);
  });
}

void adamax_step(OptimState& state, ParameterSet& params, const ParameterSet& grads, std::optional<double> alpha) {
  const AdamConfig& c = state.config;
  const double lr = alpha.value_or(c.alpha);
  for_each_parameter(state, params, grads, [&](MatrixXd& theta, MatrixXd& m, MatrixXd& u, const MatrixXd& g) {
    const auto t = static_cast<double>(state.step);
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    u = (c.beta2 * u).cwiseMax(g.cwiseAbs());
    const double step_size = lr / (1.0 - std::pow(c.beta1, t));
    theta.array() -= step_size * m.array() / u.array().max(c.u_floor);
  });
}

void step(Method method, OptimState& state, ParameterSet& params, const ParameterSet& grads, std::optional<double> alpha) {
  if (method == Method::adam) adam_step(state, params, grads, alpha);
  else adamax_step(state, params, grads, alpha);
}

double lr_at(const SchedulerConfig& cfg, std::int64_t step_num) {
  if (step_num <= 0) fail(ErrorCode::step_zero, "learning-rate schedule is defined from step 1");
  if (cfg.d_model < 1 || cfg.warmup_steps < 1)
    fail(ErrorCode::invalid_argument, "schedule needs d_model >= 1 and warmup_steps >= 1");
  const auto s = static_cast<double>(step_num);
  const auto w = static_cast<double>(cfg.warmup_steps);
  return std::pow(static_cast<double>(cfg.d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

}  // namespace essaylens::optim
