#pragma once

#include <functional>

#include "pspg/tensor.hpp"

namespace pspg {

// Scalar-valued function of one tensor, built with the ops in tensor.hpp.
using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares the reverse-mode gradient of `f` at `x` against central
// differences, in 64-bit mode. Returns
//   max_i |analytic_i - numeric_i| / max(1e-8, |numeric_i|).
// Throws NumericError when any evaluation is non-finite.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

// Same measure for a live parameter that `loss` reads by handle. The
// parameter is perturbed in place, held at 64-bit for the duration, and
// restored bitwise afterwards.
double grad_check_param(const std::function<Tensor()>& loss, const Tensor& param,
                        double eps = 1e-5);

}  // namespace pspg
