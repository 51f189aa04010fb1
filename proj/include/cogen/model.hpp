#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cogen/transformer.hpp"

namespace cogen {

enum class LossKind { uncertainty, weighted };

struct LossMode {
  LossKind kind = LossKind::uncertainty;
  double alpha = 0.5;

  // "uncertainty" or "weighted:<alpha>"; throws ConfigError.
  static LossMode parse(const std::string& text);
  std::string str() const;
};

// How the response decoder reads the act hidden states: per-step attention,
// or a fixed mean of the rows (pipeline ablation).
enum class ActAttention { dynamic, mean };

struct ModelConfig {
  TransformerConfig transformer;
  std::size_t word_vocab = 0;
  std::size_t act_vocab = 0;
  std::size_t belief_size = 0;
  ActAttention act_attention = ActAttention::dynamic;

  void validate() const;
};

template <typename Real>
struct DualEncoding {
  EncoderOutput<Real> act;   // current utterance + db tokens
  EncoderOutput<Real> resp;  // full history + db tokens
};

template <typename Real>
struct ActForward {
  Tensor<Real> logits;  // [t x act_vocab]
  Tensor<Real> hidden;  // H^a, [t x d]: one row per input act token
};

// Shared encoder, act decoder with belief injection, and response decoder
// with attention over the act hidden states.
template <typename Real>
class CogenModel {
 public:
  using KeyValue = typename TransformerBlock<Real>::KeyValue;

  CogenModel(const ModelConfig& cfg, std::uint64_t seed);
  CogenModel(const CogenModel&) = delete;
  CogenModel& operator=(const CogenModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<Real>& params() { return params_; }
  const ParameterSet<Real>& params() const { return params_; }
  const Tensor<Real>& s1() const { return s1_; }
  const Tensor<Real>& s2() const { return s2_; }

  // One encoder, two masks. `act_mask` marks the current utterance and db
  // tokens; the response pass keeps everything. Throws ContractError when the
  // act mask keeps nothing.
  DualEncoding<Real> encode_shared(std::span<const int> source, std::span<const std::uint8_t> act_mask,
                                   AttentionTrace* trace = nullptr) const;

  // W_b v_b, [1 x d].
  Tensor<Real> belief_projection(std::span<const float> belief) const;

  // Teacher-forced act decoder over `acts` (starting with <sos>). Logits of
  // row i predict token i + 1.
  ActForward<Real> act_forward(const DualEncoding<Real>& dual, std::span<const float> belief,
                               std::span<const int> acts) const;

  // Teacher-forced response decoder over `prefix` (starting with <sos>).
  // `act_trace` receives the act-attention weights of every layer.
  Tensor<Real> response_forward(const DualEncoding<Real>& dual, const Tensor<Real>& act_hidden,
                                std::span<const int> prefix, AttentionTrace* act_trace = nullptr) const;

  // Incremental decoding.
  struct ActState {
    typename Decoder<Real>::State decoder;
    Tensor<Real> belief;  // [1 x d]
  };
  struct ResponseState {
    typename Decoder<Real>::State decoder;
    std::vector<KeyValue> act_memory;
    std::size_t act_rows = 0;
  };
  ActState act_start(const DualEncoding<Real>& dual, std::span<const float> belief) const;
  // Feeds `token`; returns logits [1 x act_vocab] for the next token.
  Tensor<Real> act_step(ActState& state, int token) const;
  ResponseState response_start(const DualEncoding<Real>& dual, const Tensor<Real>& act_hidden) const;
  // Feeds `token`; returns logits [1 x word_vocab]. `act_weights` receives the
  // final-layer act attention [heads x 1 x act_rows] when given.
  Tensor<Real> response_step(ResponseState& state, int token, std::vector<Real>* act_weights = nullptr) const;

 private:
  Tensor<Real> act_inputs(std::span<const int> acts, const Tensor<Real>& belief, std::size_t first) const;
  Tensor<Real> act_memory_source(const Tensor<Real>& act_hidden) const;
  void check_ids(std::span<const int> ids, std::size_t vocab, const char* what) const;

  ModelConfig cfg_;
  Rng init_rng_;
  ParameterSet<Real> params_;
  Tensor<Real> word_embed_, act_embed_;
  Encoder<Real> encoder_;
  Decoder<Real> act_decoder_;
  Tensor<Real> belief_weight_, act_output_;
  Decoder<Real> resp_decoder_;
  BlockStack<Real> act_attention_;
  Tensor<Real> resp_output_;
  Tensor<Real> s1_, s2_;
};

// Token-summed cross entropy over rows whose target is not <pad>, plus the
// number of such rows. Targets are the inputs shifted left by one.
template <typename Real>
struct TokenLoss {
  Tensor<Real> sum;
  std::size_t tokens = 0;
};

template <typename Real>
TokenLoss<Real> sequence_loss(const Tensor<Real>& logits, std::span<const int> inputs);

// L = alpha L_a + (1 - alpha) L_r. Throws ConfigError for alpha outside [0, 1].
template <typename Real>
Tensor<Real> weighted_sum_loss(const Tensor<Real>& la, const Tensor<Real>& lr, double alpha);

// L = exp(-s1) L_a / 2 + exp(-s2) L_r / 2 + s1 + s2, with s = log sigma^2.
template <typename Real>
Tensor<Real> uncertainty_loss(const Tensor<Real>& la, const Tensor<Real>& lr, const Tensor<Real>& s1,
                              const Tensor<Real>& s2);

double weighted_sum_loss(double la, double lr, double alpha);
double uncertainty_loss(double la, double lr, double s1, double s2);

extern template class CogenModel<float>;
extern template class CogenModel<double>;

}  // namespace cogen
