#include "cogen/transformer.hpp"

#include <cmath>

#include "cogen/error.hpp"

namespace cogen {

void TransformerConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || max_seq_len == 0) {
    throw ConfigError("transformer sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (dropout != 0.0) throw ConfigError("dropout is reserved and must be 0");
}

std::vector<double> AttentionTrace::head_average(std::size_t layer) const {
  std::vector<double> avg(queries * keys, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < queries * keys; ++i) avg[i] += layers[layer][h * queries * keys + i];
  }
  for (auto& v : avg) v /= static_cast<double>(heads);
  return avg;
}

template <typename Real>
Linear<Real> Linear<Real>::create(ParameterSet<Real>& params, const std::string& name, std::size_t in,
                                  std::size_t out, Rng& rng) {
  std::vector<Real> w(in * out);
  const double sd = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& x : w) x = static_cast<Real>(sd * rng.normal());
  Linear lin;
  lin.weight = params.add(name + ".weight", Tensor<Real>::from({in, out}, std::move(w)));
  lin.bias = params.add(name + ".bias", Tensor<Real>::zeros({out}));
  return lin;
}

template <typename Real>
Tensor<Real> Linear<Real>::operator()(const Tensor<Real>& x) const {
  return add_bias(output_projection(x, weight), bias);
}

template <typename Real>
LayerNorm<Real> LayerNorm<Real>::create(ParameterSet<Real>& params, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.gain = params.add(name + ".gain", Tensor<Real>::from({width}, std::vector<Real>(width, Real(1))));
  ln.bias = params.add(name + ".bias", Tensor<Real>::zeros({width}));
  return ln;
}

template <typename Real>
Tensor<Real> LayerNorm<Real>::operator()(const Tensor<Real>& x) const {
  return layer_norm(x, gain, bias, static_cast<Real>(kLayerNormEps));
}

template <typename Real>
Tensor<Real> output_projection(const Tensor<Real>& features, const Tensor<Real>& weight) {
  if (features.rank() != 2 || weight.rank() != 2 || features.dim(1) != weight.dim(0)) {
    throw DimensionError("output_projection: features " + shape_str(features.shape()) + " do not match weight " +
                         shape_str(weight.shape()));
  }
  return matmul(features, weight);
}

template <typename Real>
Tensor<Real> positional_encoding(std::size_t first, std::size_t count, std::size_t d_model) {
  std::vector<Real> pe(count * d_model);
  for (std::size_t p = 0; p < count; ++p) {
    const double pos = static_cast<double>(first + p);
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe[p * d_model + i] = static_cast<Real>(std::sin(pos * freq));
      if (i + 1 < d_model) pe[p * d_model + i + 1] = static_cast<Real>(std::cos(pos * freq));
    }
  }
  return Tensor<Real>::from({count, d_model}, std::move(pe));
}

template <typename Real>
Tensor<Real> embed_tokens(const Tensor<Real>& table, std::span<const int> ids, std::size_t first_position) {
  const std::size_t d = table.dim(1);
  Tensor<Real> e = scale(embedding(table, ids), static_cast<Real>(std::sqrt(static_cast<double>(d))));
  return add(e, positional_encoding<Real>(first_position, ids.size(), d));
}

template <typename Real>
TransformerBlock<Real>::TransformerBlock(ParameterSet<Real>& params, const std::string& prefix,
                                         const TransformerConfig& cfg, Rng& rng, bool self_attention)
    : self_attention_(self_attention),
      heads_(cfg.n_heads),
      norm_attn_(LayerNorm<Real>::create(params, prefix + ".norm_attn", cfg.d_model)),
      norm_ffn_(LayerNorm<Real>::create(params, prefix + ".norm_ffn", cfg.d_model)),
      wq_(Linear<Real>::create(params, prefix + ".query", cfg.d_model, cfg.d_model, rng)),
      wk_(Linear<Real>::create(params, prefix + ".key", cfg.d_model, cfg.d_model, rng)),
      wv_(Linear<Real>::create(params, prefix + ".value", cfg.d_model, cfg.d_model, rng)),
      wo_(Linear<Real>::create(params, prefix + ".out", cfg.d_model, cfg.d_model, rng)),
      ff_in_(Linear<Real>::create(params, prefix + ".ff_in", cfg.d_model, cfg.ff_width(), rng)),
      ff_out_(Linear<Real>::create(params, prefix + ".ff_out", cfg.ff_width(), cfg.d_model, rng)) {}

template <typename Real>
typename TransformerBlock<Real>::KeyValue TransformerBlock<Real>::project_memory(const Tensor<Real>& memory) const {
  return {wk_(memory), wv_(memory)};
}

template <typename Real>
Tensor<Real> TransformerBlock<Real>::finish(const Tensor<Real>& x, const Tensor<Real>& attended) const {
  Tensor<Real> a = add(x, wo_(attended));
  return add(a, ff_out_(relu(ff_in_(norm_ffn_(a)))));
}

template <typename Real>
Tensor<Real> TransformerBlock<Real>::forward_self(const Tensor<Real>& x, const AttentionMask& mask,
                                                  std::vector<Real>* weights) const {
  if (!self_attention_) throw ContractError("forward_self called on a cross-attention block");
  Tensor<Real> xn = norm_attn_(x);
  return finish(x, attention(wq_(xn), wk_(xn), wv_(xn), mask, heads_, weights));
}

template <typename Real>
Tensor<Real> TransformerBlock<Real>::forward_cross(const Tensor<Real>& x, const KeyValue& memory,
                                                   const AttentionMask& mask, std::vector<Real>* weights) const {
  if (self_attention_) throw ContractError("forward_cross called on a self-attention block");
  Tensor<Real> xn = norm_attn_(x);
  return finish(x, attention(wq_(xn), memory.keys, memory.values, mask, heads_, weights));
}

template <typename Real>
Tensor<Real> TransformerBlock<Real>::step_self(const Tensor<Real>& row, KeyValue& cache,
                                               std::vector<Real>* weights) const {
  if (!self_attention_) throw ContractError("step_self called on a cross-attention block");
  Tensor<Real> xn = norm_attn_(row);
  Tensor<Real> k = wk_(xn), v = wv_(xn);
  if (cache.keys.defined()) {
    cache.keys = concat_rows(std::vector<Tensor<Real>>{cache.keys, k});
    cache.values = concat_rows(std::vector<Tensor<Real>>{cache.values, v});
  } else {
    cache = {k, v};
  }
  const AttentionMask mask = AttentionMask::all(row.dim(0), cache.keys.dim(0));
  return finish(row, attention(wq_(xn), cache.keys, cache.values, mask, heads_, weights));
}

namespace {

template <typename Real>
void record(AttentionTrace* trace, std::vector<Real>& w, std::size_t heads, std::size_t q, std::size_t k) {
  if (!trace) return;
  trace->heads = heads;
  trace->queries = q;
  trace->keys = k;
  trace->layers.emplace_back(w.begin(), w.end());
}

}  // namespace

template <typename Real>
BlockStack<Real>::BlockStack(ParameterSet<Real>& params, const std::string& prefix, const TransformerConfig& cfg,
                             Rng& rng, bool self_attention)
    : final_norm_([&] {
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
          blocks_.emplace_back(params, prefix + ".layer" + std::to_string(l), cfg, rng, self_attention);
        }
        return LayerNorm<Real>::create(params, prefix + ".final_norm", cfg.d_model);
      }()) {}

template <typename Real>
Tensor<Real> BlockStack<Real>::forward_self(const Tensor<Real>& x, const AttentionMask& mask,
                                            AttentionTrace* trace) const {
  if (trace) trace->layers.clear();
  Tensor<Real> h = x;
  std::vector<Real> w;
  for (const auto& b : blocks_) {
    h = b.forward_self(h, mask, trace ? &w : nullptr);
    record(trace, w, mask.rows ? w.size() / (mask.rows * mask.cols) : 0, mask.rows, mask.cols);
  }
  return final_norm_(h);
}

template <typename Real>
Tensor<Real> BlockStack<Real>::forward_cross(const Tensor<Real>& x, const std::vector<KeyValue>& memory,
                                             const AttentionMask& mask, AttentionTrace* trace) const {
  if (memory.size() != blocks_.size()) throw ContractError("forward_cross: memory projections do not match layers");
  if (trace) trace->layers.clear();
  Tensor<Real> h = x;
  std::vector<Real> w;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    h = blocks_[l].forward_cross(h, memory[l], mask, trace ? &w : nullptr);
    record(trace, w, w.size() / (mask.rows * mask.cols), mask.rows, mask.cols);
  }
  return final_norm_(h);
}

template <typename Real>
std::vector<typename BlockStack<Real>::KeyValue> BlockStack<Real>::project_memory(const Tensor<Real>& memory) const {
  std::vector<KeyValue> out;
  out.reserve(blocks_.size());
  for (const auto& b : blocks_) out.push_back(b.project_memory(memory));
  return out;
}

template <typename Real>
Tensor<Real> BlockStack<Real>::step_self(const Tensor<Real>& row, std::vector<KeyValue>& cache) const {
  if (cache.size() != blocks_.size()) cache.assign(blocks_.size(), {});
  Tensor<Real> h = row;
  for (std::size_t l = 0; l < blocks_.size(); ++l) h = blocks_[l].step_self(h, cache[l], nullptr);
  return final_norm_(h);
}

template <typename Real>
Encoder<Real>::Encoder(ParameterSet<Real>& params, const std::string& prefix, const TransformerConfig& cfg, Rng& rng)
    : cfg_(cfg), stack_(params, prefix, cfg, rng, true) {}

template <typename Real>
EncoderOutput<Real> Encoder<Real>::encode(const Tensor<Real>& embedding_table, std::span<const int> tokens,
                                          std::span<const std::uint8_t> mask, AttentionTrace* trace) const {
  if (tokens.size() != mask.size()) throw DimensionError("encode: token and mask lengths differ");
  if (tokens.empty()) throw ContractError("encode: empty input");
  EncoderOutput<Real> out;
  if (tokens.size() > cfg_.max_seq_len) {
    out.truncated = tokens.size() - cfg_.max_seq_len;
    tokens = tokens.subspan(out.truncated);
    mask = mask.subspan(out.truncated);
  }
  out.source_mask.assign(mask.begin(), mask.end());
  Tensor<Real> x = embed_tokens(embedding_table, tokens);
  out.hidden = stack_.forward_self(x, AttentionMask::from_keys(tokens.size(), out.source_mask), trace);
  return out;
}

template <typename Real>
Decoder<Real>::Decoder(ParameterSet<Real>& params, const std::string& prefix, const TransformerConfig& cfg, Rng& rng)
    : self_stack_(params, prefix + ".self", cfg, rng, true), cross_stack_(params, prefix + ".cross", cfg, rng, false) {}

template <typename Real>
typename Decoder<Real>::Output Decoder<Real>::forward(const Tensor<Real>& inputs, const EncoderOutput<Real>& enc,
                                                      AttentionTrace* self_trace,
                                                      AttentionTrace* cross_trace) const {
  if (!inputs.defined() || inputs.rank() != 2) throw ContractError("decoder: empty prefix");
  const std::size_t t = inputs.dim(0);
  Tensor<Real> h = self_stack_.forward_self(inputs, AttentionMask::causal(t), self_trace);
  Tensor<Real> c = cross_stack_.forward_cross(h, cross_stack_.project_memory(enc.hidden),
                                              AttentionMask::from_keys(t, enc.source_mask), cross_trace);
  return {h, c};
}

template <typename Real>
typename Decoder<Real>::State Decoder<Real>::start(const EncoderOutput<Real>& enc) const {
  State s;
  s.memory = cross_stack_.project_memory(enc.hidden);
  s.memory_mask = AttentionMask::from_keys(1, enc.source_mask);
  return s;
}

template <typename Real>
typename Decoder<Real>::Output Decoder<Real>::step(const Tensor<Real>& input_row, State& state) const {
  if (!input_row.defined() || input_row.dim(0) != 1) throw ContractError("decoder step expects one input row");
  Tensor<Real> h = self_stack_.step_self(input_row, state.self_cache);
  Tensor<Real> c = cross_stack_.forward_cross(h, state.memory, state.memory_mask);
  ++state.position;
  return {h, c};
}

#define COGEN_INSTANTIATE_TRANSFORMER(Real)                                                         \
  template struct Linear<Real>;                                                                     \
  template struct LayerNorm<Real>;                                                                  \
  template Tensor<Real> output_projection(const Tensor<Real>&, const Tensor<Real>&);                \
  template Tensor<Real> positional_encoding<Real>(std::size_t, std::size_t, std::size_t);           \
  template Tensor<Real> embed_tokens(const Tensor<Real>&, std::span<const int>, std::size_t);       \
  template class TransformerBlock<Real>;                                                            \
  template class BlockStack<Real>;                                                                  \
  template class Encoder<Real>;                                                                     \
  template class Decoder<Real>;

COGEN_INSTANTIATE_TRANSFORMER(float)
COGEN_INSTANTIATE_TRANSFORMER(double)

#undef COGEN_INSTANTIATE_TRANSFORMER

}  // namespace cogen
