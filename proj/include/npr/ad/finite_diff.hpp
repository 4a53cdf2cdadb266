#pragma once

#include "npr/ad/tensor.hpp"

namespace npr::ad {

// Max over coordinates of |autodiff - central difference| / (|central difference| + floor).
// fn must rebuild the loss graph from the current leaf values on every call.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>()>& fn,
                         std::vector<Tensor<T>> leaves, double eps = 1e-5,
                         double rel_floor = 1e-6) {
  auto l0 = fn();
  if (l0.size() != 1) throw std::invalid_argument("finite_diff_check: loss must be scalar");
  {
    auto l1 = fn();
    if (l0.item() != l1.item())
      throw std::invalid_argument("finite_diff_check: stochastic function (two evaluations differ)");
  }
  if (!std::isfinite(double(l0.item())))
    throw std::invalid_argument("finite_diff_check: non-finite loss");

  for (auto& l : leaves) l.zero_grad();
  auto loss = fn();
  backward(loss);

  double worst = 0;
  for (auto& leaf : leaves) {
    auto& vals = leaf.values();
    auto& g = leaf.grad();
    for (size_t i = 0; i < vals.size(); ++i) {
      T keep = vals[i];
      vals[i] = keep + T(eps);
      double fp = double(fn().item());
      vals[i] = keep - T(eps);
      double fm = double(fn().item());
      vals[i] = keep;
      double fd = (fp - fm) / (2.0 * eps);
      if (!std::isfinite(fd)) throw std::invalid_argument("finite_diff_check: non-finite difference");
      double err = std::abs(double(g[i]) - fd) / (std::abs(fd) + rel_floor);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace npr::ad
