#include "cogen/model.hpp"

#include <cmath>
#include <cstdlib>

#include "cogen/corpus.hpp"
#include "cogen/error.hpp"

namespace cogen {

LossMode LossMode::parse(const std::string& text) {
  LossMode m;
  if (text == "uncertainty") return m;
  const std::string prefix = "weighted:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string num = text.substr(prefix.size());
    char* end = nullptr;
    const double a = std::strtod(num.c_str(), &end);
    if (num.empty() || *end != '\0') throw ConfigError("loss_mode: bad alpha in '" + text + "'");
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("loss_mode: alpha must lie in [0, 1], got " + num);
    m.kind = LossKind::weighted;
    m.alpha = a;
    return m;
  }
  throw ConfigError("loss_mode: expected 'uncertainty' or 'weighted:<alpha>', got '" + text + "'");
}

std::string LossMode::str() const {
  if (kind == LossKind::uncertainty) return "uncertainty";
  char buf[32];
  std::snprintf(buf, sizeof buf, "weighted:%g", alpha);
  return buf;
}

void ModelConfig::validate() const {
  transformer.validate();
  if (word_vocab <= static_cast<std::size_t>(kUnkId) || act_vocab <= static_cast<std::size_t>(kUnkId)) {
    throw ConfigError("model: vocabularies must extend past the reserved ids");
  }
  if (belief_size == 0) throw ConfigError("model: belief_size must be positive");
}

namespace {

template <typename Real>
Tensor<Real> init_matrix(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = static_cast<Real>(sd * rng.normal());
  return Tensor<Real>::from({rows, cols}, std::move(v));
}

template <typename Real>
Tensor<Real> ones_column(std::size_t n) {
  return Tensor<Real>::from({n, 1}, std::vector<Real>(n, Real(1)));
}

const TransformerConfig& validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg.transformer;
}

}  // namespace

template <typename Real>
CogenModel<Real>::CogenModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      init_rng_(seed),
      word_embed_(params_.add("embed.word", init_matrix<Real>(cfg.word_vocab, cfg.transformer.d_model,
                                                              1.0 / std::sqrt(double(cfg.transformer.d_model)),
                                                              init_rng_))),
      act_embed_(params_.add("embed.act", init_matrix<Real>(cfg.act_vocab, cfg.transformer.d_model,
                                                            1.0 / std::sqrt(double(cfg.transformer.d_model)),
                                                            init_rng_))),
      encoder_(params_, "encoder", validated(cfg), init_rng_),
      act_decoder_(params_, "act.decoder", cfg.transformer, init_rng_),
      belief_weight_(params_.add("act.belief", init_matrix<Real>(cfg.belief_size, cfg.transformer.d_model,
                                                                 1.0 / std::sqrt(double(cfg.belief_size)),
                                                                 init_rng_))),
      act_output_(params_.add("act.output", init_matrix<Real>(2 * cfg.transformer.d_model, cfg.act_vocab,
                                                              1.0 / std::sqrt(2.0 * cfg.transformer.d_model),
                                                              init_rng_))),
      resp_decoder_(params_, "response.decoder", cfg.transformer, init_rng_),
      act_attention_(params_, "response.act_attention", cfg.transformer, init_rng_, false),
      resp_output_(params_.add("response.output", init_matrix<Real>(3 * cfg.transformer.d_model, cfg.word_vocab,
                                                                    1.0 / std::sqrt(3.0 * cfg.transformer.d_model),
                                                                    init_rng_))),
      s1_(params_.add("uncertainty.s1", Tensor<Real>::zeros({1}))),
      s2_(params_.add("uncertainty.s2", Tensor<Real>::zeros({1}))) {}

template <typename Real>
void CogenModel<Real>::check_ids(std::span<const int> ids, std::size_t vocab, const char* what) const {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw VocabularyError(std::string(what) + " id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab));
    }
  }
}

template <typename Real>
DualEncoding<Real> CogenModel<Real>::encode_shared(std::span<const int> source, std::span<const std::uint8_t> act_mask,
                                                   AttentionTrace* trace) const {
  if (source.size() != act_mask.size()) throw DimensionError("encode_shared: source and mask lengths differ");
  bool any = false;
  for (auto m : act_mask) any = any || m;
  if (!any) throw ContractError("encode_shared: empty current utterance");
  check_ids(source, cfg_.word_vocab, "source");
  const std::vector<std::uint8_t> all(source.size(), 1);
  DualEncoding<Real> dual;
  dual.resp = encoder_.encode(word_embed_, source, all, trace);
  bool same = true;
  for (auto m : act_mask) same = same && m;
  dual.act = same ? dual.resp : encoder_.encode(word_embed_, source, act_mask);
  return dual;
}

template <typename Real>
Tensor<Real> CogenModel<Real>::belief_projection(std::span<const float> belief) const {
  if (belief.size() != cfg_.belief_size) {
    throw DimensionError("belief vector has length " + std::to_string(belief.size()) + ", expected " +
                         std::to_string(cfg_.belief_size));
  }
  std::vector<Real> v(belief.begin(), belief.end());
  return matmul(Tensor<Real>::from({1, belief.size()}, std::move(v)), belief_weight_);
}

template <typename Real>
Tensor<Real> CogenModel<Real>::act_inputs(std::span<const int> acts, const Tensor<Real>& belief,
                                          std::size_t first) const {
  check_ids(acts, cfg_.act_vocab, "act");
  Tensor<Real> e = embed_tokens(act_embed_, acts, first);
  return add(e, matmul(ones_column<Real>(acts.size()), belief));
}

template <typename Real>
ActForward<Real> CogenModel<Real>::act_forward(const DualEncoding<Real>& dual, std::span<const float> belief,
                                               std::span<const int> acts) const {
  if (acts.empty() || acts[0] != kSosId) throw ContractError("act_forward: prefix must start with <sos>");
  auto out = act_decoder_.forward(act_inputs(acts, belief_projection(belief), 0), dual.act);
  Tensor<Real> logits = output_projection(concat_cols(std::vector<Tensor<Real>>{out.h, out.c}), act_output_);
  return {logits, out.c};
}

template <typename Real>
Tensor<Real> CogenModel<Real>::act_memory_source(const Tensor<Real>& act_hidden) const {
  if (!act_hidden.defined() || act_hidden.rank() != 2 || act_hidden.dim(0) == 0) {
    throw ContractError("response decoding requires act hidden states");
  }
  if (act_hidden.dim(1) != cfg_.transformer.d_model) throw DimensionError("act hidden states have the wrong width");
  return cfg_.act_attention == ActAttention::mean ? mean_rows(act_hidden) : act_hidden;
}

template <typename Real>
Tensor<Real> CogenModel<Real>::response_forward(const DualEncoding<Real>& dual, const Tensor<Real>& act_hidden,
                                                std::span<const int> prefix, AttentionTrace* act_trace) const {
  if (prefix.empty() || prefix[0] != kSosId) throw ContractError("response_forward: prefix must start with <sos>");
  check_ids(prefix, cfg_.word_vocab, "response");
  const Tensor<Real> memory = act_memory_source(act_hidden);
  auto out = resp_decoder_.forward(embed_tokens(word_embed_, prefix), dual.resp);
  Tensor<Real> o = act_attention_.forward_cross(out.h, act_attention_.project_memory(memory),
                                                AttentionMask::all(prefix.size(), memory.dim(0)), act_trace);
  return output_projection(concat_cols(std::vector<Tensor<Real>>{out.h, out.c, o}), resp_output_);
}

template <typename Real>
typename CogenModel<Real>::ActState CogenModel<Real>::act_start(const DualEncoding<Real>& dual,
                                                                std::span<const float> belief) const {
  return {act_decoder_.start(dual.act), belief_projection(belief)};
}

template <typename Real>
Tensor<Real> CogenModel<Real>::act_step(ActState& state, int token) const {
  const int ids[] = {token};
  Tensor<Real> in = act_inputs(ids, state.belief, state.decoder.position);
  auto out = act_decoder_.step(in, state.decoder);
  return output_projection(concat_cols(std::vector<Tensor<Real>>{out.h, out.c}), act_output_);
}

template <typename Real>
typename CogenModel<Real>::ResponseState CogenModel<Real>::response_start(const DualEncoding<Real>& dual,
                                                                          const Tensor<Real>& act_hidden) const {
  const Tensor<Real> memory = act_memory_source(act_hidden);
  return {resp_decoder_.start(dual.resp), act_attention_.project_memory(memory), memory.dim(0)};
}

template <typename Real>
Tensor<Real> CogenModel<Real>::response_step(ResponseState& state, int token, std::vector<Real>* act_weights) const {
  const int ids[] = {token};
  check_ids(ids, cfg_.word_vocab, "response");
  auto out = resp_decoder_.step(embed_tokens(word_embed_, std::span<const int>(ids), state.decoder.position),
                               state.decoder);
  Tensor<Real> o;
  if (act_weights) {
    AttentionTrace trace;
    o = act_attention_.forward_cross(out.h, state.act_memory, AttentionMask::all(1, state.act_rows), &trace);
    act_weights->assign(trace.layers.back().begin(), trace.layers.back().end());
  } else {
    o = act_attention_.forward_cross(out.h, state.act_memory, AttentionMask::all(1, state.act_rows));
  }
  return output_projection(concat_cols(std::vector<Tensor<Real>>{out.h, out.c, o}), resp_output_);
}

template <typename Real>
TokenLoss<Real> sequence_loss(const Tensor<Real>& logits, std::span<const int> inputs) {
  std::vector<int> targets(inputs.begin() + 1, inputs.end());
  targets.push_back(kPadId);
  TokenLoss<Real> out;
  for (int t : targets) out.tokens += t != kPadId;
  out.sum = cross_entropy(logits, targets, kPadId);
  return out;
}

template <typename Real>
Tensor<Real> weighted_sum_loss(const Tensor<Real>& la, const Tensor<Real>& lr, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("weighted loss: alpha must lie in [0, 1]");
  return add(scale(la, static_cast<Real>(alpha)), scale(lr, static_cast<Real>(1.0 - alpha)));
}

template <typename Real>
Tensor<Real> uncertainty_loss(const Tensor<Real>& la, const Tensor<Real>& lr, const Tensor<Real>& s1,
                              const Tensor<Real>& s2) {
  const Real half = static_cast<Real>(0.5);
  Tensor<Real> a = scale(mul(exp(scale(s1, Real(-1))), la), half);
  Tensor<Real> r = scale(mul(exp(scale(s2, Real(-1))), lr), half);
  return add(add(a, r), add(s1, s2));
}

double weighted_sum_loss(double la, double lr, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("weighted loss: alpha must lie in [0, 1]");
  return alpha * la + (1.0 - alpha) * lr;
}

double uncertainty_loss(double la, double lr, double s1, double s2) {
  return 0.5 * std::exp(-s1) * la + 0.5 * std::exp(-s2) * lr + s1 + s2;
}

template class CogenModel<float>;
template class CogenModel<double>;

#define COGEN_INSTANTIATE_LOSSES(Real)                                                                      \
  template struct TokenLoss<Real>;                                                                          \
  template TokenLoss<Real> sequence_loss(const Tensor<Real>&, std::span<const int>);                        \
  template Tensor<Real> weighted_sum_loss(const Tensor<Real>&, const Tensor<Real>&, double);                \
  template Tensor<Real> uncertainty_loss(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,     \
                                         const Tensor<Real>&);

COGEN_INSTANTIATE_LOSSES(float)
COGEN_INSTANTIATE_LOSSES(double)

#undef COGEN_INSTANTIATE_LOSSES

}  // namespace cogen
