#include "mufasa/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mufasa/error.hpp"

namespace mufasa {

namespace {

const Tensor& require_grad(const Parameter& p) {
  if (!p.grad) {
    fail(ErrorCode::kUnpopulatedGradient, fmt::format("parameter '{}' has no gradient", p.name));
  }
  return *p.grad;
}

}  // namespace

void sgd_step(std::span<Parameter* const> params, double lr) {
  if (!(lr > 0.0)) fail(ErrorCode::kConfig, fmt::format("learning rate must be > 0, got {}", lr));
  for (Parameter* p : params) {
    const Tensor& g = require_grad(*p);
    for (std::size_t i = 0; i < g.size(); ++i) p->value[i] -= lr * g[i];
  }
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) {
    fail(ErrorCode::kConfig, fmt::format("learning rate must be > 0, got {}", config_.lr));
  }
}

void Optimizer::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) require_grad(*p);
  if (config_.kind == OptimizerKind::kSgd) {
    sgd_step(params, config_.lr);
    return;
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (Parameter* p : params) {
    const Tensor& g = *p->grad;
    auto [it, inserted] = moments_.try_emplace(p);
    if (inserted) {
      it->second.m = Tensor(g.rows(), g.cols());
      it->second.v = Tensor(g.rows(), g.cols());
    }
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      p->value[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

}  // namespace mufasa
