#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mufasa/autodiff.hpp"

namespace mufasa {

/// Central-difference estimate of d f / d p, one coordinate at a time:
/// (f(p + h e) - f(p - h e)) / 2h. p is restored exactly afterwards.
Tensor fd_gradient(const std::function<double()>& f, Parameter& p, double h = 1e-5);

// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂); zero when both norms are below 1e-12.
double relative_error(const Tensor& analytic, const Tensor& numeric);

struct ParamCheck {
  std::string param;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::string component;
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Applied to each analytic gradient before comparison; negative controls only.
  std::function<void(Tensor&)> corrupt;
};

/// Differentiates the scalar built by `build` w.r.t. every parameter in
/// `params` via the tape and via fd_gradient, and compares them.
GradCheckReport check_gradients(const std::string& component,
                                const std::function<Var(Tape&)>& build,
                                std::span<Parameter* const> params,
                                const GradCheckOptions& options = {});

/// Every differentiable component at small dimensions (d = 6, L = 11, N = 5):
/// the four MFL losses and their weighted total, the window, block and
/// selective heads, block aggregation, the gate and the user-item contrast.
std::vector<GradCheckReport> gradient_suite(const GradCheckOptions& options = {},
                                            std::uint64_t seed = 3);

}  // namespace mufasa
