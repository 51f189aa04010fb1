#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cogen/ops.hpp"
#include "cogen/parameters.hpp"
#include "cogen/rng.hpp"

namespace cogen {

inline constexpr double kLayerNormEps = 1e-5;

struct TransformerConfig {
  std::size_t n_layers = 3;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 0;  // 0 means 4 * d_model
  std::size_t max_seq_len = 512;
  double dropout = 0.0;  // reserved; only 0 is supported

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }
  // Throws ConfigError.
  void validate() const;
};

// Per-layer, per-head attention weights of one stack.
struct AttentionTrace {
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::vector<double>> layers;  // each laid out [heads x queries x keys]

  double weight(std::size_t layer, std::size_t head, std::size_t q, std::size_t k) const {
    return layers[layer][(head * queries + q) * keys + k];
  }
  // [queries x keys] average over heads of one layer.
  std::vector<double> head_average(std::size_t layer) const;
};

template <typename Real>
struct Linear {
  Tensor<Real> weight;  // [in x out]
  Tensor<Real> bias;    // [out]

  static Linear create(ParameterSet<Real>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor<Real> operator()(const Tensor<Real>& x) const;
};

template <typename Real>
struct LayerNorm {
  Tensor<Real> gain;
  Tensor<Real> bias;

  static LayerNorm create(ParameterSet<Real>& params, const std::string& name, std::size_t width);
  Tensor<Real> operator()(const Tensor<Real>& x) const;
};

// features [t x w] times W [w x V]; consumers apply the softmax.
template <typename Real>
Tensor<Real> output_projection(const Tensor<Real>& features, const Tensor<Real>& weight);

// Fixed sinusoidal encodings for positions [first, first + count), [count x d].
template <typename Real>
Tensor<Real> positional_encoding(std::size_t first, std::size_t count, std::size_t d_model);

// Token embeddings scaled by sqrt(d_model) plus sinusoidal positions.
template <typename Real>
Tensor<Real> embed_tokens(const Tensor<Real>& table, std::span<const int> ids, std::size_t first_position = 0);

// One attention sublayer followed by a position-wise feed-forward sublayer,
// both pre-normalized with residual connections on the query stream. Self
// blocks take keys/values from the normalized query stream; cross blocks take
// them from an external memory.
template <typename Real>
class TransformerBlock {
 public:
  struct KeyValue {
    Tensor<Real> keys;
    Tensor<Real> values;
  };

  TransformerBlock(ParameterSet<Real>& params, const std::string& prefix, const TransformerConfig& cfg, Rng& rng,
                   bool self_attention);

  bool self_attention() const { return self_attention_; }
  // Projects an external memory once so it can be reused across steps.
  KeyValue project_memory(const Tensor<Real>& memory) const;

  Tensor<Real> forward_self(const Tensor<Real>& x, const AttentionMask& mask, std::vector<Real>* weights) const;
  Tensor<Real> forward_cross(const Tensor<Real>& x, const KeyValue& memory, const AttentionMask& mask,
                             std::vector<Real>* weights) const;
  // Incremental self-attention for one new row: appends its key/value to
  // `cache` and attends over everything cached so far.
  Tensor<Real> step_self(const Tensor<Real>& row, KeyValue& cache, std::vector<Real>* weights) const;

 private:
  Tensor<Real> finish(const Tensor<Real>& x, const Tensor<Real>& attended) const;

  bool self_attention_;
  std::size_t heads_;
  LayerNorm<Real> norm_attn_, norm_ffn_;
  Linear<Real> wq_, wk_, wv_, wo_, ff_in_, ff_out_;
};

// n_layers blocks plus a final layer norm.
template <typename Real>
class BlockStack {
 public:
  using KeyValue = typename TransformerBlock<Real>::KeyValue;

  BlockStack(ParameterSet<Real>& params, const std::string& prefix, const TransformerConfig& cfg, Rng& rng,
             bool self_attention);

  std::size_t layers() const { return blocks_.size(); }
  const TransformerBlock<Real>& block(std::size_t i) const { return blocks_[i]; }

  Tensor<Real> forward_self(const Tensor<Real>& x, const AttentionMask& mask, AttentionTrace* trace = nullptr) const;
  Tensor<Real> forward_cross(const Tensor<Real>& x, const std::vector<KeyValue>& memory, const AttentionMask& mask,
                             AttentionTrace* trace = nullptr) const;
  std::vector<KeyValue> project_memory(const Tensor<Real>& memory) const;
  // One new row through the causal self-attention stack.
  Tensor<Real> step_self(const Tensor<Real>& row, std::vector<KeyValue>& cache) const;

 private:
  std::vector<TransformerBlock<Real>> blocks_;
  LayerNorm<Real> final_norm_;
};

template <typename Real>
struct EncoderOutput {
  Tensor<Real> hidden;                     // [seq x d_model]
  std::vector<std::uint8_t> source_mask;   // true for attendable positions
  std::size_t truncated = 0;               // tokens dropped from the oldest side
};

template <typename Real>
class Encoder {
 public:
  Encoder(ParameterSet<Real>& params, const std::string& prefix, const TransformerConfig& cfg, Rng& rng);

  // Self-attention over embeddings of `tokens`; masked positions never serve
  // as keys. Inputs longer than max_seq_len lose their oldest tokens.
  EncoderOutput<Real> encode(const Tensor<Real>& embedding_table, std::span<const int> tokens,
                             std::span<const std::uint8_t> mask, AttentionTrace* trace = nullptr) const;

  const BlockStack<Real>& stack() const { return stack_; }

 private:
  TransformerConfig cfg_;
  BlockStack<Real> stack_;
};

// Causal self-attention stack (h) followed by a cross-attention stack over the
// encoder states (c).
template <typename Real>
class Decoder {
 public:
  using KeyValue = typename TransformerBlock<Real>::KeyValue;

  struct Output {
    Tensor<Real> h;  // [t x d]
    Tensor<Real> c;  // [t x d]
  };

  // Incremental state: per-layer self-attention caches plus the projected
  // encoder memory.
  struct State {
    std::vector<KeyValue> self_cache;
    std::vector<KeyValue> memory;
    AttentionMask memory_mask;  // one row
    std::size_t position = 0;
  };

  Decoder(ParameterSet<Real>& params, const std::string& prefix, const TransformerConfig& cfg, Rng& rng);

  // Teacher-forced pass over the whole prefix of input embeddings.
  Output forward(const Tensor<Real>& inputs, const EncoderOutput<Real>& enc, AttentionTrace* self_trace = nullptr,
                 AttentionTrace* cross_trace = nullptr) const;

  State start(const EncoderOutput<Real>& enc) const;
  // Consumes one input row; returns that position's (h, c).
  Output step(const Tensor<Real>& input_row, State& state) const;

  const BlockStack<Real>& self_stack() const { return self_stack_; }
  const BlockStack<Real>& cross_stack() const { return cross_stack_; }

 private:
  BlockStack<Real> self_stack_;
  BlockStack<Real> cross_stack_;
};

}  // namespace cogen
