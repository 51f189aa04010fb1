#include "cogen/parameters.hpp"

#include "cogen/error.hpp"

namespace cogen {

template <typename Real>
Tensor<Real> ParameterSet<Real>::add(std::string name, Tensor<Real> tensor) {
  if (contains(name)) throw ContractError("parameter registered twice: " + name);
  tensor.set_requires_grad(true);
  entries_.push_back({std::move(name), tensor});
  return tensor;
}

template <typename Real>
const Tensor<Real>& ParameterSet<Real>::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw ContractError("unknown parameter: " + std::string(name));
}

template <typename Real>
bool ParameterSet<Real>::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

template <typename Real>
std::vector<Tensor<Real>> ParameterSet<Real>::tensors() const {
  std::vector<Tensor<Real>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

template <typename Real>
std::vector<Tensor<Real>> ParameterSet<Real>::with_prefix(std::string_view prefix) const {
  std::vector<Tensor<Real>> out;
  for (const auto& e : entries_) {
    if (std::string_view(e.name).substr(0, prefix.size()) == prefix) out.push_back(e.tensor);
  }
  return out;
}

template <typename Real>
std::size_t ParameterSet<Real>::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename Real>
void ParameterSet<Real>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace cogen
