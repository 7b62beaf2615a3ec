#include "latentlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace latentlab {

namespace {

double eval_finite(const ScalarFn& f, const Tensor& x) {
  const double v = f(x).item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: f evaluated to a non-finite value");
  return v;
}

}  // namespace

std::vector<double> numeric_gradient(const ScalarFn& f, const Tensor& x, double eps) {
  NoGradGuard no_grad;
  std::vector<double> base = x.to_vector();
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = eval_finite(f, Tensor::from_vector(x.shape(), std::move(plus)));
    const double fm = eval_finite(f, Tensor::from_vector(x.shape(), std::move(minus)));
    out[i] = (fp - fm) / (2.0 * eps);
  }
  return out;
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps) {
  Tensor leaf = Tensor::from_vector(x.shape(), x.to_vector(), true);
  Tensor y = f(leaf);
  if (!std::isfinite(y.item())) throw NumericError("finite_diff_check: f(x) is non-finite");
  y.backward();
  std::vector<double> analytic(leaf.numel(), 0.0);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

  const auto numeric = numeric_gradient(f, x, eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(1e-12, std::abs(numeric[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace latentlab
