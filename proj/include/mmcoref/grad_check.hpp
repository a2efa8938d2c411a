#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmcoref/tensor.hpp"

namespace mmcoref {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
  };
  std::vector<Entry> per_param;
  double max_rel_error = 0.0;
};

/// Compares analytic gradients of `loss_fn` against central differences
/// (f(p+eps) - f(p-eps)) / (2 eps) for every element of every parameter.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
/// `loss_fn` must rebuild its graph from the current parameter values on
/// every call. Parameter gradients are reset before the analytic pass.
GradReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor>& params,
                      double eps = 1e-5);

}  // namespace mmcoref
