#ifndef APDA_OPTIM_HPP
#define APDA_OPTIM_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "apda/tensor.hpp"

namespace apda {

/// One heavy-ball update per parameter: v <- momentum * v + g; p <- p - lr * v.
/// `velocity` is created lazily (zeros) on the first call.
inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::span<const double> lrs,
                     double momentum, std::vector<Tensor>& velocity) {
  if (grads.size() != params.size() || lrs.size() != params.size()) {
    throw DimensionError("sgd_step: params, grads and learning rates must align");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("sgd_step: momentum must lie in [0, 1)");
  if (velocity.empty()) {
    velocity.reserve(params.size());
    for (const Tensor* p : params) velocity.emplace_back(p->shape(), 0.0);
  }
  if (velocity.size() != params.size()) throw DimensionError("sgd_step: velocity buffer does not match params");

  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!(lrs[k] > 0.0)) throw ValidationError("sgd_step: learning rate must be positive");
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    Tensor& v = velocity[k];
    if (!g.same_shape(p) || !v.same_shape(p)) throw DimensionError("sgd_step: gradient shape differs from parameter");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lrs[k] * v[i];
    }
  }
}

inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr, double momentum,
                     std::vector<Tensor>& velocity) {
  std::vector<double> lrs(params.size(), lr);
  sgd_step(params, grads, lrs, momentum, velocity);
}

}  // namespace apda

#endif  // APDA_OPTIM_HPP
