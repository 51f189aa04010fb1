#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cogen/tensor.hpp"

namespace cogen {

// Ordered, uniquely named collection of trainable tensors. The order is the
// checkpoint order and the optimizer slot order.
template <typename Real>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<Real> tensor;
  };

  // Registers a tensor (marked requires_grad) and returns a handle to it.
  Tensor<Real> add(std::string name, Tensor<Real> tensor);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  // Throws ContractError when missing.
  const Tensor<Real>& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<Tensor<Real>> tensors() const;
  // Tensors whose names begin with `prefix`.
  std::vector<Tensor<Real>> with_prefix(std::string_view prefix) const;
  std::size_t element_count() const;

  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace cogen
