#include "mufasa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mufasa/error.hpp"

namespace mufasa {

Tensor fd_gradient(const std::function<double()>& f, Parameter& p, double h) {
  if (!(h > 0.0)) fail(ErrorCode::kConfig, "fd_gradient step must be > 0");
  Tensor grad(p.value.rows(), p.value.cols());
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double original = p.value[i];
    p.value[i] = original + h;
    const double up = f();
    p.value[i] = original - h;
    const double down = f();
    p.value[i] = original;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nn));
  if (denom < 1e-12) return 0.0;
  return std::sqrt(diff) / denom;
}

GradCheckReport check_gradients(const std::string& component,
                                const std::function<Var(Tape&)>& build,
                                std::span<Parameter* const> params,
                                const GradCheckOptions& options) {
  zero_grads(params);
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  GradCheckReport report{component, {}, 0.0, true};
  const auto f = [&] { return evaluate_scalar(build); };
  for (Parameter* p : params) {
    Tensor analytic = p->grad ? *p->grad : Tensor(p->value.rows(), p->value.cols());
    if (options.corrupt) options.corrupt(analytic);
    const Tensor numeric = fd_gradient(f, *p, options.step);
    const double err = relative_error(analytic, numeric);
    report.params.push_back({p->name, err});
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  zero_grads(params);
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace mufasa
