#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include <torch/torch.h>

namespace gina::testing {

struct GradCheck {
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;
};

// Compares autograd against central differences on `probes` random coordinates of x.
// `loss` must map a float64 tensor to a scalar.
// Compares a supplied gradient `analytic` (same shape as x0) against central differences.
inline GradCheck grad_check_against(const std::function<torch::Tensor(const torch::Tensor&)>& loss,
                                    const torch::Tensor& x0, const torch::Tensor& analytic,
                                    int probes, std::uint64_t seed, double eps = 1e-6) {
  auto x = x0.detach();
  auto g = analytic.reshape({-1});
  auto gen = at::detail::createCPUGenerator(seed);
  auto picks = torch::randperm(x.numel(), gen).slice(0, 0, std::min<std::int64_t>(probes, x.numel()));
  GradCheck r;
  torch::NoGradGuard guard;
  for (std::int64_t k = 0; k < picks.size(0); ++k) {
    const auto i = picks[k].item<std::int64_t>();
    auto xp = x.detach().clone();
    auto xm = x.detach().clone();
    xp.view({-1})[i] += eps;
    xm.view({-1})[i] -= eps;
    const double num = (loss(xp).item<double>() - loss(xm).item<double>()) / (2 * eps);
    const double ana = g[i].item<double>();
    const double denom = std::max({std::abs(num), std::abs(ana), 1e-5});
    r.max_rel_err = std::max(r.max_rel_err, std::abs(num - ana) / denom);
    r.max_abs_grad = std::max(r.max_abs_grad, std::abs(ana));
  }
  return r;
}

inline GradCheck grad_check(const std::function<torch::Tensor(const torch::Tensor&)>& loss,
                            const torch::Tensor& x0, int probes, std::uint64_t seed,
                            double eps = 1e-6) {
  auto x = x0.detach().clone().set_requires_grad(true);
  auto g = torch::autograd::grad({loss(x)}, {x})[0];
  return grad_check_against(loss, x0, g, probes, seed, eps);
}

}  // namespace gina::testing
