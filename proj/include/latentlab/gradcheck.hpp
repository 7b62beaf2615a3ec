#pragma once

#include <functional>

#include "latentlab/tensor.hpp"

namespace latentlab {

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares the autodiff gradient of `f` at `x` against central differences.
// Returns max_i |autodiff_i - fd_i| / max(1e-12, |fd_i|).
// Throws NumericError if any evaluation of f is non-finite.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps = 1e-6);

// Central-difference gradient of f at x (no autodiff involved).
std::vector<double> numeric_gradient(const ScalarFn& f, const Tensor& x, double eps);

}  // namespace latentlab
