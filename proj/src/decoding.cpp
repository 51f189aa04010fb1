#include "cogen/decoding.hpp"

#include <cstdio>

namespace cogen {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size must be at least 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
}

bool trigram_allowed(std::span<const int> tokens, int candidate) {
  const std::size_t n = tokens.size();
  if (n < 2) return true;
  const int a = tokens[n - 2], b = tokens[n - 1];
  for (std::size_t i = 0; i + 2 < n; ++i) {
    if (tokens[i] == a && tokens[i + 1] == b && tokens[i + 2] == candidate) return false;
  }
  return true;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double ranking_score(const Hypothesis& h, const DecodeConfig& cfg) {
  if (!cfg.length_norm || h.tokens.size() < 2) return h.score;
  return h.score / static_cast<double>(h.tokens.size() - 1);
}

namespace {

struct PrefixState {
  std::vector<int> prefix;
};

}  // namespace

Hypothesis beam_search(const PrefixProvider& provider, const DecodeConfig& cfg, int sos, int eos) {
  auto step = [&](PrefixState& s, int token) {
    s.prefix.push_back(token);
    return provider(s.prefix);
  };
  return beam_search(PrefixState{}, step, cfg, sos, eos);
}

Hypothesis greedy_search(const PrefixProvider& provider, const DecodeConfig& cfg, int sos, int eos) {
  cfg.validate();
  Hypothesis h{{sos}, 0.0, false, false};
  for (std::size_t len = 1; len <= cfg.max_len; ++len) {
    const auto logp = log_softmax(provider(h.tokens));
    int best = -1;
    for (std::size_t v = 0; v < logp.size(); ++v) {
      const int tok = static_cast<int>(v);
      if (std::find(cfg.banned.begin(), cfg.banned.end(), tok) != cfg.banned.end()) continue;
      if (cfg.trigram_block && !trigram_allowed(h.tokens, tok)) continue;
      if (logp[v] == -std::numeric_limits<double>::infinity()) continue;
      if (best < 0 || logp[v] > logp[best]) best = tok;
    }
    if (best < 0) {
      if (h.tokens.size() == 1) throw ContractError("greedy search: every continuation is blocked or banned");
      break;
    }
    h.tokens.push_back(best);
    h.score += logp[best];
    if (best == eos) {
      h.finished = true;
      return h;
    }
  }
  h.truncated = true;
  return h;
}

double rescore(const PrefixProvider& provider, std::span<const int> tokens) {
  double s = 0.0;
  std::vector<int> prefix;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    prefix.push_back(tokens[i]);
    s += log_softmax(provider(prefix))[tokens[i + 1]];
  }
  return s;
}

std::string format_attention(const AttentionMatrix& m) {
  std::string out = "# act attention: rows are response tokens, columns act tokens\n";
  out += "token";
  for (const auto& c : m.columns) out += "\t" + c;
  out += "\n";
  char buf[32];
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    out += m.rows[r];
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
      std::snprintf(buf, sizeof buf, "\t%.6f", m.at(r, c));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

namespace {

template <typename Real>
std::vector<double> to_double(const Tensor<Real>& logits) {
  return std::vector<double>(logits.data().begin(), logits.data().end());
}

template <typename Real>
GeneratedTurn generate_impl(const CogenModel<Real>& act_model, const CogenModel<Real>& response_model,
                            const EncodedTurn& turn, const Vocabularies& vocab, const Ontology& ontology,
                            const GenerateConfig& cfg, bool with_trace) {
  NoGradGuard no_grad;
  GeneratedTurn out;

  const auto act_dual = act_model.encode_shared(turn.source, turn.act_mask);
  DecodeConfig act_cfg = cfg.acts;
  act_cfg.banned.insert(act_cfg.banned.end(), {kPadId, kSosId, kUnkId});
  const auto act_hyp = beam_search(
      act_model.act_start(act_dual, turn.belief),
      [&](typename CogenModel<Real>::ActState& s, int tok) { return to_double(act_model.act_step(s, tok)); }, act_cfg,
      kSosId, kEosId);
  out.act_ids = act_hyp.tokens;
  out.act_score = act_hyp.score;
  out.act_truncated = act_hyp.truncated;
  ActSequence seq;
  for (int id : out.act_ids) seq.push_back(vocab.acts.token(id));
  out.acts = parse_acts(seq, ontology).acts;
  std::size_t body = out.act_ids.size() - 1 - (act_hyp.finished ? 1 : 0);
  out.empty_acts = body == 0;

  const Tensor<Real> act_hidden = act_model.act_forward(act_dual, turn.belief, out.act_ids).hidden;

  const auto& resp_dual = &act_model == &response_model ? act_dual : response_model.encode_shared(turn.source, turn.act_mask);
  DecodeConfig resp_cfg = cfg.response;
  resp_cfg.banned.insert(resp_cfg.banned.end(), {kPadId, kSosId, kUnkId});
  const auto resp_hyp = beam_search(
      response_model.response_start(resp_dual, act_hidden),
      [&](typename CogenModel<Real>::ResponseState& s, int tok) { return to_double(response_model.response_step(s, tok)); },
      resp_cfg, kSosId, kEosId);
  out.response_score = resp_hyp.score;
  out.response_truncated = resp_hyp.truncated;
  for (std::size_t i = 1; i < resp_hyp.tokens.size(); ++i) {
    if (resp_hyp.tokens[i] == kEosId) break;
    out.response_ids.push_back(resp_hyp.tokens[i]);
  }
  out.response = vocab.words.decode(out.response_ids);

  if (with_trace) {
    AttentionTrace trace;
    response_model.response_forward(resp_dual, act_hidden, resp_hyp.tokens, &trace);
    auto& m = out.act_attention;
    if (response_model.config().act_attention == ActAttention::mean) {
      m.columns = {"<mean>"};
    } else {
      for (int id : out.act_ids) m.columns.push_back(vocab.acts.token(id));
    }
    const auto avg = trace.head_average(trace.layers.size() - 1);
    // Query position i emits token i + 1.
    for (std::size_t i = 0; i + 1 < resp_hyp.tokens.size(); ++i) {
      m.rows.push_back(vocab.words.token(resp_hyp.tokens[i + 1]));
      m.weights.insert(m.weights.end(), avg.begin() + static_cast<std::ptrdiff_t>(i * trace.keys),
                       avg.begin() + static_cast<std::ptrdiff_t>((i + 1) * trace.keys));
    }
  }
  return out;
}

}  // namespace

template <typename Real>
GeneratedTurn generate_turn(const CogenModel<Real>& model, const EncodedTurn& turn, const Vocabularies& vocab,
                            const Ontology& ontology, const GenerateConfig& cfg, bool with_trace) {
  return generate_impl(model, model, turn, vocab, ontology, cfg, with_trace);
}

template <typename Real>
GeneratedTurn generate_turn(const CogenModel<Real>& act_model, const CogenModel<Real>& response_model,
                            const EncodedTurn& turn, const Vocabularies& vocab, const Ontology& ontology,
                            const GenerateConfig& cfg, bool with_trace) {
  return generate_impl(act_model, response_model, turn, vocab, ontology, cfg, with_trace);
}

#define COGEN_INSTANTIATE_GENERATE(Real)                                                                      \
  template GeneratedTurn generate_turn(const CogenModel<Real>&, const EncodedTurn&, const Vocabularies&,     \
                                       const Ontology&, const GenerateConfig&, bool);                        \
  template GeneratedTurn generate_turn(const CogenModel<Real>&, const CogenModel<Real>&, const EncodedTurn&, \
                                       const Vocabularies&, const Ontology&, const GenerateConfig&, bool);

COGEN_INSTANTIATE_GENERATE(float)
COGEN_INSTANTIATE_GENERATE(double)

#undef COGEN_INSTANTIATE_GENERATE

}  // namespace cogen
