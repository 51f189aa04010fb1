#include "cogen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "cogen/error.hpp"

namespace cogen {

AttentionMask AttentionMask::all(std::size_t rows, std::size_t cols) {
  return {rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

AttentionMask AttentionMask::from_keys(std::size_t rows, std::span<const std::uint8_t> key_keep) {
  AttentionMask m{rows, key_keep.size(), {}};
  m.keep.reserve(rows * key_keep.size());
  for (std::size_t r = 0; r < rows; ++r) m.keep.insert(m.keep.end(), key_keep.begin(), key_keep.end());
  return m;
}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.keep[i * n + j] = 1;
  }
  return m;
}

namespace {

template <typename Real>
void require_matrix(const Tensor<Real>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

}  // namespace

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<Real> out(m * n, Real(0));
  const Real* A = a.data().data();
  const Real* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    Real* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = A[i * k + p];
      const Real* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return Tensor<Real>::from_op({m, n}, std::move(out), {a, b}, [m, k, n](Node<Real>& self) {
    const Real* G = self.grad.data();
    const Real* A = self.parents[0]->data.data();
    const Real* B = self.parents[1]->data.data();
    if (self.parent_wants_grad(0)) {
      Real* dA = self.parent_grad(0).data();
      std::vector<Real> bt(n * k);
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
      }
      for (std::size_t i = 0; i < m; ++i) {
        Real* drow = dA + i * k;
        const Real* g = G + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          const Real gv = g[j];
          const Real* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) drow[p] += gv * btrow[p];
        }
      }
    }
    if (self.parent_wants_grad(1)) {
      Real* dB = self.parent_grad(1).data();
      for (std::size_t i = 0; i < m; ++i) {
        const Real* g = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const Real av = A[i * k + p];
          Real* drow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += av * g[j];
        }
      }
    }
  });
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<Real>::from_op(a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!self.parent_wants_grad(p)) continue;
      auto& g = self.parent_grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor<Real>::from_op(a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    if (self.parent_wants_grad(0)) {
      auto& g = self.parent_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parent_wants_grad(1)) {
      auto& g = self.parent_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<Real>::from_op(a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!self.parent_wants_grad(p)) continue;
      const auto& other = self.parents[1 - p]->data;
      auto& g = self.parent_grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return Tensor<Real>::from_op(a.shape(), std::move(out), {a}, [factor](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  const std::size_t n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match trailing axis of " +
                         shape_str(x.shape()));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias.data()[j];
  }
  return Tensor<Real>::from_op(x.shape(), std::move(out), {x, bias}, [rows, n](Node<Real>& self) {
    if (self.parent_wants_grad(0)) {
      auto& g = self.parent_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parent_wants_grad(1)) {
      auto& g = self.parent_grad(1);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
      }
    }
  });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > Real(0) ? x.data()[i] : Real(0);
  return Tensor<Real>::from_op(x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    const auto& in = self.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > Real(0)) g[i] += self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
  return Tensor<Real>::from_op(x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
  });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& x) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x.data()[i] > Real(0))) throw NumericError("log of a non-positive value");
    out[i] = std::log(x.data()[i]);
  }
  return Tensor<Real>::from_op(x.shape(), std::move(out), {x}, [](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    const auto& in = self.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / in[i];
  });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real total = 0;
  for (Real v : x.data()) total += v;
  return Tensor<Real>::from_op({1}, {total}, {x}, [](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean_rows(const Tensor<Real>& x) {
  require_matrix(x, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<Real> out(n, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += x.data()[i * n + j];
  }
  for (auto& v : out) v /= static_cast<Real>(m);
  return Tensor<Real>::from_op({1, n}, std::move(out), {x}, [m, n](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    const Real inv = Real(1) / static_cast<Real>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
    }
  });
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  std::vector<Real> out(x.numel());
  const Real* in = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = o * n * inner + c;
      Real mx = in[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      Real total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Real e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return Tensor<Real>::from_op(x.shape(), std::move(out), {x}, [outer, inner, n](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = o * n * inner + c;
        Real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * dy[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps) {
  const std::size_t d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  if (!(eps > Real(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.rows();
  auto xhat = std::make_shared<std::vector<Real>>(x.numel());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  std::vector<Real> out(x.numel());
  const Real* in = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = in + r * d;
    Real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Real>(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (row[j] - mean) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  return Tensor<Real>::from_op(
      x.shape(), std::move(out), {x, gain, bias}, [rows, d, xhat, inv_std](Node<Real>& self) {
        const auto& dy = self.grad;
        const auto& gain = self.parents[1]->data;
        if (self.parent_wants_grad(0)) {
          auto& dx = self.parent_grad(0);
          for (std::size_t r = 0; r < rows; ++r) {
            Real mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const Real dh = dy[r * d + j] * gain[j];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[r * d + j];
            }
            mean_dh /= static_cast<Real>(d);
            mean_dh_h /= static_cast<Real>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const Real dh = dy[r * d + j] * gain[j];
              dx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
            }
          }
        }
        if (self.parent_wants_grad(1)) {
          auto& dg = self.parent_grad(1);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * (*xhat)[r * d + j];
          }
        }
        if (self.parent_wants_grad(2)) {
          auto& db = self.parent_grad(2);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
          }
        }
      });
}

template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> targets, int ignore_id) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), V = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  for (int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(V) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<Real>>(n * V);
  std::vector<int> tgt(targets.begin(), targets.end());
  Real total = 0;
  const Real* L = logits.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = L + i * V;
    Real mx = row[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    Real z = 0;
    for (std::size_t j = 0; j < V; ++j) {
      const Real e = std::exp(row[j] - mx);
      (*probs)[i * V + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < V; ++j) (*probs)[i * V + j] /= z;
    if (tgt[i] == ignore_id) continue;
    total += -(row[tgt[i]] - mx - std::log(z));
  }
  return Tensor<Real>::from_op({1}, {total}, {logits},
                               [n, V, probs, tgt = std::move(tgt), ignore_id](Node<Real>& self) {
                                 auto& g = self.parent_grad(0);
                                 const Real up = self.grad[0];
                                 for (std::size_t i = 0; i < n; ++i) {
                                   if (tgt[i] == ignore_id) continue;
                                   for (std::size_t j = 0; j < V; ++j) g[i * V + j] += up * (*probs)[i * V + j];
                                   g[i * V + static_cast<std::size_t>(tgt[i])] -= up;
                                 }
                               });
}

template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t V = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ContractError("embedding: empty id sequence");
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<Real> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= V) {
      throw IndexError("embedding: id " + std::to_string(idx[i]) + " outside vocabulary of " +
                       std::to_string(V));
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const std::size_t n = idx.size();
  return Tensor<Real>::from_op({n, d}, std::move(out), {table}, [d, idx = std::move(idx)](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t base = static_cast<std::size_t>(idx[i]) * d;
      for (std::size_t j = 0; j < d; ++j) g[base + j] += self.grad[i * d + j];
    }
  });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
  require_matrix(x, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<Real> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.data()[i * n + j];
  }
  return Tensor<Real>::from_op({n, m}, std::move(out), {x}, [m, n](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<Real> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(parts[k].data().begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    }
    offset += widths[k];
  }
  return Tensor<Real>::from_op({m, total}, std::move(out), parts, [m, total, widths](Node<Real>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (self.parent_wants_grad(k)) {
        auto& g = self.parent_grad(k);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  std::vector<Real> out;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != n) throw DimensionError("concat_rows: column counts differ");
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor<Real>::from_op({rows, n}, std::move(out), parts, [](Node<Real>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t len = self.parents[k]->data.size();
      if (self.parent_wants_grad(k)) {
        auto& g = self.parent_grad(k);
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1);
  std::vector<Real> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                        x.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return Tensor<Real>::from_op({end - begin, n}, std::move(out), {x}, [begin, n](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  if (begin >= end || end > x.dim(1)) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1), w = end - begin;
  std::vector<Real> out(m * w);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.data()[i * n + begin + j];
  }
  return Tensor<Real>::from_op({m, w}, std::move(out), {x}, [m, n, w, begin](Node<Real>& self) {
    auto& g = self.parent_grad(0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
    }
  });
}

template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       const AttentionMask& mask, std::size_t heads, std::vector<Real>* weights) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != m) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()) + " are incompatible");
  }
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by head count");
  if (mask.rows != n || mask.cols != m) {
    throw DimensionError("attention: mask is " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                         ", scores are " + std::to_string(n) + "x" + std::to_string(m));
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < m && !any; ++j) any = mask.allowed(i, j);
    if (!any) throw ContractError("attention: query row " + std::to_string(i) + " has no attendable key");
  }
  const std::size_t dh = d / heads;
  const Real sc = Real(1) / std::sqrt(static_cast<Real>(dh));
  const Real masked = static_cast<Real>(kMaskedScore);
  auto probs = std::make_shared<std::vector<Real>>(heads * n * m);
  std::vector<Real> out(n * d, Real(0));
  const Real* Q = q.data().data();
  const Real* K = k.data().data();
  const Real* Vv = v.data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      Real* p = probs->data() + (h * n + i) * m;
      const Real* qi = Q + i * d + off;
      Real mx = std::numeric_limits<Real>::lowest();
      for (std::size_t j = 0; j < m; ++j) {
        const Real* kj = K + j * d + off;
        Real s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= sc;
        if (!mask.allowed(i, j)) s += masked;
        p[j] = s;
        mx = std::max(mx, s);
      }
      Real z = 0;
      for (std::size_t j = 0; j < m; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < m; ++j) p[j] /= z;
      Real* oi = out.data() + i * d + off;
      for (std::size_t j = 0; j < m; ++j) {
        const Real w = p[j];
        const Real* vj = Vv + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
      }
    }
  }
  if (weights) *weights = *probs;
  return Tensor<Real>::from_op(
      {n, d}, std::move(out), {q, k, v}, [n, m, d, dh, heads, sc, probs](Node<Real>& self) {
        const Real* G = self.grad.data();
        const Real* Q = self.parents[0]->data.data();
        const Real* K = self.parents[1]->data.data();
        const Real* Vv = self.parents[2]->data.data();
        // The same node may feed several slots (e.g. k == v); grads are fetched
        // lazily so aliasing accumulates correctly.
        Real* dQ = self.parent_wants_grad(0) ? self.parent_grad(0).data() : nullptr;
        Real* dK = self.parent_wants_grad(1) ? self.parent_grad(1).data() : nullptr;
        Real* dV = self.parent_wants_grad(2) ? self.parent_grad(2).data() : nullptr;
        std::vector<Real> dS(m);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < n; ++i) {
            const Real* p = probs->data() + (h * n + i) * m;
            const Real* gi = G + i * d + off;
            Real dot = 0;
            for (std::size_t j = 0; j < m; ++j) {
              const Real* vj = Vv + j * d + off;
              Real dp = 0;
              for (std::size_t c = 0; c < dh; ++c) dp += gi[c] * vj[c];
              dS[j] = dp;
              dot += p[j] * dp;
              if (dV) {
                Real* dvj = dV + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * gi[c];
              }
            }
            const Real* qi = Q + i * d + off;
            for (std::size_t j = 0; j < m; ++j) {
              const Real ds = p[j] * (dS[j] - dot) * sc;
              if (ds == Real(0)) continue;
              const Real* kj = K + j * d + off;
              if (dQ) {
                Real* dqi = dQ + i * d + off;
                for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
              }
              if (dK) {
                Real* dkj = dK + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
              }
            }
          }
        }
      });
}

#define COGEN_INSTANTIATE_OPS(Real)                                                                      \
  template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                                \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                                \
  template Tensor<Real> add_bias(const Tensor<Real>&, const Tensor<Real>&);                              \
  template Tensor<Real> relu(const Tensor<Real>&);                                                       \
  template Tensor<Real> exp(const Tensor<Real>&);                                                        \
  template Tensor<Real> log(const Tensor<Real>&);                                                        \
  template Tensor<Real> sum(const Tensor<Real>&);                                                        \
  template Tensor<Real> mean_rows(const Tensor<Real>&);                                                  \
  template Tensor<Real> softmax(const Tensor<Real>&, std::size_t);                                       \
  template Tensor<Real> layer_norm(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Real); \
  template Tensor<Real> cross_entropy(const Tensor<Real>&, std::span<const int>, int);                   \
  template Tensor<Real> embedding(const Tensor<Real>&, std::span<const int>);                            \
  template Tensor<Real> transpose(const Tensor<Real>&);                                                  \
  template Tensor<Real> concat_cols(const std::vector<Tensor<Real>>&);                                   \
  template Tensor<Real> concat_rows(const std::vector<Tensor<Real>>&);                                   \
  template Tensor<Real> slice_rows(const Tensor<Real>&, std::size_t, std::size_t);                       \
  template Tensor<Real> slice_cols(const Tensor<Real>&, std::size_t, std::size_t);                       \
  template Tensor<Real> attention(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,         \
                                  const AttentionMask&, std::size_t, std::vector<Real>*);

COGEN_INSTANTIATE_OPS(float)
COGEN_INSTANTIATE_OPS(double)

#undef COGEN_INSTANTIATE_OPS

}  // namespace cogen
