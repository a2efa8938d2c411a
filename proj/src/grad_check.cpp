#include "mmcoref/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "mmcoref/errors.hpp"

namespace mmcoref {
namespace {

double evaluate(const std::function<Tensor()>& loss_fn) {
  const double value = loss_fn().item();
  if (!std::isfinite(value)) throw NumericError("grad_check: loss is not finite");
  return value;
}

}  // namespace

GradReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor>& params,
                      double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ContractError("grad_check: eps must lie in (0, 1e-2]");

  for (auto& p : params) p.tensor.zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is not finite");
  backward(loss);

  GradReport report;
  for (auto& p : params) {
    std::vector<double> analytic(p.tensor.size(), 0.0);
    if (p.tensor.has_grad()) std::ranges::copy(p.tensor.grad(), analytic.begin());

    double worst = 0.0;
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(loss_fn);
      values[i] = saved - eps;
      const double down = evaluate(loss_fn);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    report.per_param.push_back({p.name, worst});
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  return report;
}

}  // namespace mmcoref
