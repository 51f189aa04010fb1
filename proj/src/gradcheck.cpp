#include "cogen/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cogen/error.hpp"
#include "cogen/ops.hpp"
#include "cogen/rng.hpp"

namespace cogen {

namespace {

Tensor<double> reduce_to_scalar(const Tensor<double>& out, std::uint64_t seed) {
  if (out.numel() == 1) return out;
  Rng rng(mix_seed(seed, 0xC0FFEE));
  std::vector<double> w(out.numel());
  for (auto& x : w) x = rng.normal();
  return sum(mul(out, Tensor<double>::from(out.shape(), std::move(w))));
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

// Central difference at `step`; an element that disagrees is re-measured at
// step / 100 and keeps the smaller error. Disagreement caused by a kink (ReLU)
// lying within `step` vanishes at the finer step, a wrong backward rule does not.
template <typename Eval>
double element_error(const Eval& eval, double& slot, double analytic, double step) {
  const double saved = slot;
  auto central = [&](double h) {
    slot = saved + h;
    const double plus = eval();
    slot = saved - h;
    const double minus = eval();
    slot = saved;
    return (plus - minus) / (2.0 * h);
  };
  const double err = relative_error(analytic, central(step));
  if (err <= kGradcheckRefineBelow) return err;
  return std::min(err, relative_error(analytic, central(step / 100.0)));
}

}  // namespace

double gradcheck(const GradcheckFn& fn, std::vector<Tensor<double>> inputs, std::uint64_t seed, double step) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  auto eval = [&] { return reduce_to_scalar(fn(inputs), seed); };
  Tensor<double> loss = eval();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.push_back(t.grad_or_zero());

  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      worst = std::max(worst, element_error([&] { return eval().item(); }, data[i], analytic[k][i], step));
    }
  }
  return worst;
}

double gradcheck(const GradcheckFn& fn, const std::vector<Shape>& shapes, std::uint64_t seed, double step) {
  Rng rng(seed);
  std::vector<Tensor<double>> inputs;
  for (const auto& s : shapes) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = rng.normal();
    inputs.push_back(Tensor<double>::from(s, std::move(v), true));
  }
  return gradcheck(fn, std::move(inputs), seed, step);
}

double gradcheck_parameters(const std::function<Tensor<double>()>& loss, const std::vector<Tensor<double>>& params,
                            double step) {
  for (auto p : params) p.zero_grad();
  Tensor<double> l = loss();
  if (l.numel() != 1) throw ContractError("gradcheck_parameters: loss must be scalar");
  backward(l);
  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto p : params) {
    const auto analytic = p.grad_or_zero();
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      worst = std::max(worst, element_error([&] { return loss().item(); }, data[i], analytic[i], step));
    }
  }
  return worst;
}

std::vector<GradcheckCase> primitive_gradcheck_cases() {
  using T = Tensor<double>;
  using In = std::vector<T>;
  constexpr double tol = 1e-4;
  std::vector<GradcheckCase> cases;
  cases.push_back({"matmul", [](const In& x) { return matmul(x[0], x[1]); }, {{3, 4}, {4, 2}}, tol});
  cases.push_back({"add", [](const In& x) { return add(x[0], x[1]); }, {{2, 3}, {2, 3}}, tol});
  cases.push_back({"sub", [](const In& x) { return sub(x[0], x[1]); }, {{2, 3}, {2, 3}}, tol});
  cases.push_back({"mul", [](const In& x) { return mul(x[0], x[1]); }, {{2, 3}, {2, 3}}, tol});
  cases.push_back({"scale", [](const In& x) { return scale(x[0], 0.37); }, {{2, 3}}, tol});
  cases.push_back({"add_bias", [](const In& x) { return add_bias(x[0], x[1]); }, {{3, 4}, {4}}, tol});
  cases.push_back({"relu", [](const In& x) { return relu(x[0]); }, {{3, 4}}, tol});
  cases.push_back({"exp", [](const In& x) { return exp(x[0]); }, {{2, 3}}, tol});
  cases.push_back({"log", [](const In& x) { return log(exp(x[0])); }, {{2, 3}}, tol});
  cases.push_back({"sum", [](const In& x) { return sum(x[0]); }, {{2, 3}}, tol});
  cases.push_back({"mean_rows", [](const In& x) { return mean_rows(x[0]); }, {{3, 4}}, tol});
  cases.push_back({"softmax_last", [](const In& x) { return softmax(x[0], 1); }, {{3, 5}}, tol});
  cases.push_back({"softmax_first", [](const In& x) { return softmax(x[0], 0); }, {{3, 5}}, tol});
  cases.push_back({"layer_norm", [](const In& x) { return layer_norm(x[0], x[1], x[2], 1e-5); },
                   {{3, 6}, {6}, {6}}, tol});
  cases.push_back({"cross_entropy",
                   [](const In& x) {
                     const std::vector<int> targets{2, 0, 99, 4};
                     return cross_entropy(x[0], targets, 99);
                   },
                   {{4, 5}}, tol});
  cases.push_back({"softmax_cross_entropy",
                   [](const In& x) {
                     const std::vector<int> targets{1, 3, 0};
                     return cross_entropy(matmul(x[0], x[1]), targets, -1);
                   },
                   {{3, 4}, {4, 5}}, tol});
  cases.push_back({"embedding",
                   [](const In& x) {
                     const std::vector<int> ids{2, 0, 2, 3};
                     return embedding(x[0], ids);
                   },
                   {{4, 3}}, tol});
  cases.push_back({"transpose", [](const In& x) { return transpose(x[0]); }, {{2, 5}}, tol});
  cases.push_back({"concat_cols", [](const In& x) { return concat_cols(std::vector<T>{x[0], x[1]}); },
                   {{3, 2}, {3, 4}}, tol});
  cases.push_back({"concat_rows", [](const In& x) { return concat_rows(std::vector<T>{x[0], x[1]}); },
                   {{1, 3}, {2, 3}}, tol});
  cases.push_back({"slice_rows", [](const In& x) { return slice_rows(x[0], 1, 3); }, {{4, 3}}, tol});
  cases.push_back({"slice_cols", [](const In& x) { return slice_cols(x[0], 1, 3); }, {{2, 4}}, tol});
  cases.push_back({"attention",
                   [](const In& x) {
                     AttentionMask mask = AttentionMask::all(3, 4);
                     mask.keep[0 * 4 + 3] = 0;
                     mask.keep[2 * 4 + 0] = 0;
                     return attention(x[0], x[1], x[2], mask, 2);
                   },
                   {{3, 4}, {4, 4}, {4, 4}}, tol});
  cases.push_back({"attention_causal",
                   [](const In& x) { return attention(x[0], x[0], x[1], AttentionMask::causal(4), 2); },
                   {{4, 6}, {4, 6}}, tol});
  return cases;
}

GradcheckCase corrupted_backward_case() {
  auto fn = [](const std::vector<Tensor<double>>& x) {
    std::vector<double> out(x[0].numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[0].data()[i] * x[0].data()[i];
    return Tensor<double>::from_op(x[0].shape(), std::move(out), {x[0]}, [](Node<double>& self) {
      auto& g = self.parent_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.parents[0]->data[i];
    });
  };
  return {"corrupted_square", fn, {{3}}, 1e-4};
}

}  // namespace cogen
