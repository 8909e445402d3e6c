#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "mufasa/autodiff.hpp"

namespace mufasa {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Gradient-descent step over a parameter set. Plain SGD (p <- p - lr*g) by
/// default; Adam when configured. Every parameter must have a populated grad.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  void step(std::span<Parameter* const> params);

  const OptimizerConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  OptimizerConfig config_;
  std::unordered_map<const Parameter*, Moments> moments_;
  long steps_ = 0;
};

// One plain gradient-descent step: p <- p - lr * g.
void sgd_step(std::span<Parameter* const> params, double lr);

}  // namespace mufasa
