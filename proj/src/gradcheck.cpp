#include "timemae/gradcheck.hpp"

#include <cmath>

TIMEMAE_BEGIN_NAMESPACE

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  Tensor y = f();
  if (y.numel() != 1) throw ContractError("finite_diff_check needs a scalar-valued function");
  return static_cast<double>(y.item());
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  double eps) {
  if (!(eps > 0)) throw ContractError("finite_diff_check step must be positive");
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor y = f();
  if (y.numel() != 1) throw ContractError("finite_diff_check needs a scalar-valued function");
  double first = static_cast<double>(y.item());
  double second = eval_scalar(f);
  if (first != second) {
    throw OracleInvalidError("function is not deterministic under a fixed seed (" +
                             std::to_string(first) + " vs " + std::to_string(second) + ")");
  }
  backward(y);

  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& x = inputs[t];
    std::vector<Real> analytic(x.numel(), Real(0));
    if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      Real saved = values[i];
      values[i] = static_cast<Real>(saved + eps);
      double plus = eval_scalar(f);
      values[i] = static_cast<Real>(saved - eps);
      double minus = eval_scalar(f);
      values[i] = saved;
      double numeric = (plus - minus) / (2.0 * eps);
      double err = std::abs(static_cast<double>(analytic[i]) - numeric) / (std::abs(numeric) + 1e-8);
      if (err > report.max_rel_error || (t == 0 && i == 0)) {
        report.max_rel_error = err;
        report.worst_input = t;
        report.worst_index = i;
        report.analytic = analytic[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  return finite_diff_check([&] { return f(x); }, {x}, eps).max_rel_error;
}

TIMEMAE_END_NAMESPACE
