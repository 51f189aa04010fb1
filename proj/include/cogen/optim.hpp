#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cogen/tensor.hpp"

namespace cogen {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments and step count for one parameter. The step count is kept per
// parameter so a branch that starts training late gets fresh bias correction.
template <typename Real>
struct AdamSlot {
  std::vector<Real> m;
  std::vector<Real> v;
  std::uint64_t t = 0;
};

template <typename Real>
struct AdamState {
  AdamConfig config;
  std::vector<AdamSlot<Real>> slots;  // parallel to the parameter list

  explicit AdamState(AdamConfig cfg = {}, std::size_t n_params = 0) : config(cfg), slots(n_params) {}
};

// One bias-corrected Adam update for every parameter that currently holds a
// gradient; parameters without a gradient buffer are left untouched. Clearing
// gradients afterwards is the caller's job.
template <typename Real>
void adam_step(std::span<const Tensor<Real>> params, AdamState<Real>& state);

}  // namespace cogen
