#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cogen/tensor.hpp"

namespace cogen {

// Additive value placed on masked attention scores before the softmax.
inline constexpr double kMaskedScore = -1e9;

// Boolean attention mask, rows = queries, cols = keys; true means attendable.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;

  bool allowed(std::size_t q, std::size_t k) const { return keep[q * cols + k] != 0; }

  static AttentionMask all(std::size_t rows, std::size_t cols);
  // Every query may attend exactly the keys whose flag is set.
  static AttentionMask from_keys(std::size_t rows, std::span<const std::uint8_t> key_keep);
  // Query i may attend keys 0..i.
  static AttentionMask causal(std::size_t n);
};

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);

// Elementwise product of equally shaped tensors.
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor);

// x[.., n] + bias[n]; the only broadcast supported.
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias);

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> log(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x);

// Column means of a [m x n] tensor, shape [1 x n].
template <typename Real>
Tensor<Real> mean_rows(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis);

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps);

// Sum over positions of -log softmax(logits)[target]; rows whose target equals
// ignore_id contribute nothing.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> targets, int ignore_id);

template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const int> ids);

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts);

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts);

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t end);

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, std::size_t begin, std::size_t end);

// Fused multi-head scaled dot-product attention over pre-projected inputs:
// q [n x d], k and v [m x d], d split into `heads` equal slices, scores scaled
// by 1/sqrt(d/heads). Masked scores receive kMaskedScore. When `weights` is
// given it receives the softmax weights laid out [heads x n x m].
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       const AttentionMask& mask, std::size_t heads,
                       std::vector<Real>* weights = nullptr);

}  // namespace cogen
