#include "pspg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace pspg {

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  DtypeGuard precision(Dtype::kF64);
  const std::vector<double> base(x.data().begin(), x.data().end());

  Tensor leaf = Tensor::from(x.shape(), base, /*requires_grad=*/true);
  Tensor loss = f(leaf);
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
  std::vector<double> analytic(base.size(), 0.0);
  if (loss.requires_grad()) {
    loss.backward();
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
  }

  NoGradGuard no_grad;
  std::vector<double> probe = base;
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    probe[i] = base[i] + eps;
    const double up = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = base[i] - eps;
    const double down = f(Tensor::from(x.shape(), probe)).item();
    probe[i] = base[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("grad_check: non-finite evaluation");
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check_param(const std::function<Tensor()>& loss, const Tensor& param,
                        double eps) {
  DtypeGuard precision(Dtype::kF64);
  TensorImpl& impl = *param.impl();
  const Dtype saved_dtype = impl.dtype;
  const bool saved_requires = impl.requires_grad;
  const std::vector<double> base = impl.data;
  const std::vector<double> saved_grad = impl.grad;
  impl.dtype = Dtype::kF64;
  impl.requires_grad = true;
  impl.grad.clear();

  auto restore = [&] {
    impl.data = base;
    impl.dtype = saved_dtype;
    impl.requires_grad = saved_requires;
    impl.grad = saved_grad;
  };
  try {
    Tensor value = loss();
    if (!std::isfinite(value.item())) throw NumericError("grad_check: non-finite loss");
    std::vector<double> analytic(base.size(), 0.0);
    if (value.requires_grad()) {
      value.backward();
      if (!impl.grad.empty()) analytic = impl.grad;
    }
    NoGradGuard no_grad;
    double worst = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      impl.data[i] = base[i] + eps;
      const double up = loss().item();
      impl.data[i] = base[i] - eps;
      const double down = loss().item();
      impl.data[i] = base[i];
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite evaluation");
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric)));
    }
    restore();
    return worst;
  } catch (...) {
    restore();
    throw;
  }
}

}  // namespace pspg
