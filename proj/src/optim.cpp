#include "cogen/optim.hpp"

#include <cmath>
#include <string>

#include "cogen/error.hpp"

namespace cogen {

template <typename Real>
void adam_step(std::span<const Tensor<Real>> params, AdamState<Real>& state) {
  if (state.slots.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(state.slots.size()) + " optimizer slots");
  }
  const auto& cfg = state.config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Real> p = params[i];
    if (!p.has_grad()) continue;
    auto& slot = state.slots[i];
    const std::size_t n = p.numel();
    if (slot.m.empty() && slot.t == 0) {
      slot.m.assign(n, Real(0));
      slot.v.assign(n, Real(0));
    }
    if (slot.m.size() != n || slot.v.size() != n) {
      throw DimensionError("adam_step: optimizer slot " + std::to_string(i) + " does not match parameter shape " +
                           shape_str(p.shape()));
    }
    slot.t += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
    const Real b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2);
    const Real lr = static_cast<Real>(cfg.lr), eps = static_cast<Real>(cfg.eps);
    const Real ic1 = static_cast<Real>(1.0 / c1), ic2 = static_cast<Real>(1.0 / c2);
    auto data = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t j = 0; j < n; ++j) {
      slot.m[j] = b1 * slot.m[j] + (Real(1) - b1) * g[j];
      slot.v[j] = b2 * slot.v[j] + (Real(1) - b2) * g[j] * g[j];
      const Real mhat = slot.m[j] * ic1;
      const Real vhat = slot.v[j] * ic2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step<float>(std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<const Tensor<double>>, AdamState<double>&);

}  // namespace cogen
