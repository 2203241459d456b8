#pragma once

#include <functional>
#include <vector>

#include "salbench/tensor.hpp"

namespace salbench {

// Scalar-valued composite built from the kernel ops, plus its analytic
// gradient w.r.t. every input tensor.
using ScalarFn = std::function<double(const std::vector<Tensor>&)>;
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

// Central-difference verification of an analytic gradient. Returns
//   max over all input elements of
//     |analytic - central_difference| / max(1, |analytic|, |central_difference|).
// h must lie in [1e-6, 1e-4].
double grad_check(const ScalarFn& f, const GradFn& analytic, std::vector<Tensor> inputs, double h);

}  // namespace salbench
