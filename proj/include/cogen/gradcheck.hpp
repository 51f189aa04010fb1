#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cogen/tensor.hpp"

namespace cogen {

inline constexpr double kGradcheckStep = 1e-3;
// Elements whose error exceeds this are re-measured at step / 100, which
// separates non-differentiable points near the input from wrong gradients.
inline constexpr double kGradcheckRefineBelow = 1e-6;

// Maps inputs to an output tensor. Non-scalar outputs are reduced to a scalar
// by a fixed random weighting before differentiation.
using GradcheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Central finite differences against the analytic gradient of every input
// element. Returns max |analytic - numeric| / max(1, |numeric|).
double gradcheck(const GradcheckFn& fn, std::vector<Tensor<double>> inputs, std::uint64_t seed,
                 double step = kGradcheckStep);

// Same, with inputs drawn N(0, 1) from `seed` for the given shapes.
double gradcheck(const GradcheckFn& fn, const std::vector<Shape>& shapes, std::uint64_t seed,
                 double step = kGradcheckStep);

// Checks d(loss)/d(param) for parameters that already live inside a model;
// `loss` must rebuild the graph from the current parameter values.
double gradcheck_parameters(const std::function<Tensor<double>()>& loss, const std::vector<Tensor<double>>& params,
                            double step = kGradcheckStep);

struct GradcheckCase {
  std::string name;
  GradcheckFn fn;
  std::vector<Shape> shapes;
  double threshold;
};

// Every differentiable primitive of the tensor library.
std::vector<GradcheckCase> primitive_gradcheck_cases();

// x * x with a backward rule that forgets the factor 2; must fail any check.
GradcheckCase corrupted_backward_case();

}  // namespace cogen
