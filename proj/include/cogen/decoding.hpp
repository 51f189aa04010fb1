#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cogen/act.hpp"
#include "cogen/corpus.hpp"
#include "cogen/error.hpp"
#include "cogen/model.hpp"

namespace cogen {

struct DecodeConfig {
  std::size_t beam_size = 2;
  std::size_t max_len = 80;  // tokens after <sos>, including <eos>
  bool trigram_block = true;
  bool length_norm = false;
  std::vector<int> banned;  // never generated

  void validate() const;
};

struct Hypothesis {
  std::vector<int> tokens;  // starts with <sos>
  double score = 0.0;       // summed log-probabilities of the chosen tokens
  bool finished = false;    // ended with <eos>
  bool truncated = false;   // max_len reached without <eos>
};

// False iff appending `candidate` repeats a trigram already in `tokens`.
bool trigram_allowed(std::span<const int> tokens, int candidate);

// Log-softmax in double precision.
std::vector<double> log_softmax(std::span<const double> logits);

// Final ranking value: the score, or score per generated token with length_norm.
double ranking_score(const Hypothesis& h, const DecodeConfig& cfg);

// Beam search over an incremental provider. `step(state, token)` feeds `token`
// to `state` and returns next-token logits. States are copied on branching.
// Equal scores prefer the lexicographically smaller token sequence.
template <typename State, typename Step>
Hypothesis beam_search(const State& initial, Step&& step, const DecodeConfig& cfg, int sos, int eos) {
  cfg.validate();
  struct Live {
    Hypothesis hyp;
    State state;
    std::vector<double> logp;
  };
  auto to_logp = [](const auto& logits) {
    std::vector<double> l(logits.begin(), logits.end());
    return log_softmax(l);
  };
  std::vector<Live> live;
  {
    Live root{Hypothesis{{sos}, 0.0, false, false}, initial, {}};
    root.logp = to_logp(step(root.state, sos));
    live.push_back(std::move(root));
  }
  const std::size_t vocab = live[0].logp.size();
  std::vector<bool> banned(vocab, false);
  for (int b : cfg.banned) {
    if (b >= 0 && static_cast<std::size_t>(b) < vocab) banned[b] = true;
  }
  auto better = [](double sa, const std::vector<int>& ta, double sb, const std::vector<int>& tb) {
    if (sa != sb) return sa > sb;
    return ta < tb;
  };
  std::vector<Hypothesis> finished;
  for (std::size_t len = 1; len <= cfg.max_len && !live.empty(); ++len) {
    struct Candidate {
      std::size_t beam;
      int token;
      double score;
      std::vector<int> tokens;
    };
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto& h = live[b].hyp;
      for (std::size_t v = 0; v < vocab; ++v) {
        if (banned[v]) continue;
        const int tok = static_cast<int>(v);
        if (cfg.trigram_block && !trigram_allowed(h.tokens, tok)) continue;
        const double s = h.score + live[b].logp[v];
        if (s == -std::numeric_limits<double>::infinity()) continue;
        std::vector<int> t = h.tokens;
        t.push_back(tok);
        cands.push_back({b, tok, s, std::move(t)});
      }
    }
    const std::size_t keep = std::min(cfg.beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&](const Candidate& a, const Candidate& b) { return better(a.score, a.tokens, b.score, b.tokens); });
    std::vector<Live> next;
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = cands[i];
      Hypothesis h{std::move(c.tokens), c.score, c.token == eos, false};
      if (h.finished) {
        finished.push_back(std::move(h));
        continue;
      }
      Live n{std::move(h), live[c.beam].state, {}};
      if (len < cfg.max_len) n.logp = to_logp(step(n.state, c.token));
      next.push_back(std::move(n));
    }
    live = std::move(next);
    // Summed log-probabilities never increase, so a finished hypothesis that
    // beats every live one cannot be overtaken.
    if (!cfg.length_norm && !finished.empty() && !live.empty()) {
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      bool all_worse = true;
      for (const auto& l : live) all_worse = all_worse && l.hyp.score < best_done;
      if (all_worse) live.clear();
    }
  }
  auto pick = [&](std::vector<Hypothesis>& pool) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      if (better(ranking_score(pool[i], cfg), pool[i].tokens, ranking_score(pool[best], cfg), pool[best].tokens)) {
        best = i;
      }
    }
    return pool[best];
  };
  if (!finished.empty()) return pick(finished);
  std::vector<Hypothesis> rest;
  for (auto& l : live) {
    l.hyp.truncated = true;
    rest.push_back(std::move(l.hyp));
  }
  if (rest.empty()) throw ContractError("beam search: every continuation is blocked or banned");
  return pick(rest);
}

// Stateless provider: logits depend on the whole prefix.
using PrefixProvider = std::function<std::vector<double>(std::span<const int> prefix)>;
Hypothesis beam_search(const PrefixProvider& provider, const DecodeConfig& cfg, int sos, int eos);

// Argmax at every step under the same banning and blocking rules.
Hypothesis greedy_search(const PrefixProvider& provider, const DecodeConfig& cfg, int sos, int eos);

// Recomputes a hypothesis score from the provider's logits.
double rescore(const PrefixProvider& provider, std::span<const int> tokens);

// Act-attention matrix: rows are emitted response tokens, columns the act
// tokens whose hidden states were attended, cells the final-layer weights
// averaged over heads.
struct AttentionMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<double> weights;  // rows x columns

  double at(std::size_t r, std::size_t c) const { return weights[r * columns.size() + c]; }
};

std::string format_attention(const AttentionMatrix& m);

struct GenerateConfig {
  DecodeConfig acts{2, 30, false, false, {}};
  DecodeConfig response{2, 80, true, false, {}};
};

struct GeneratedTurn {
  std::vector<int> act_ids;       // <sos> ... [<eos>]
  ActSet acts;
  std::vector<int> response_ids;  // without <sos>/<eos>
  std::vector<std::string> response;
  double act_score = 0, response_score = 0;
  bool act_truncated = false, response_truncated = false;
  bool empty_acts = false;  // the act pass produced no act tokens
  AttentionMatrix act_attention;
};

// Two passes: acts from the act encoding and belief, then the response
// attending to the decoded acts' hidden states.
template <typename Real>
GeneratedTurn generate_turn(const CogenModel<Real>& model, const EncodedTurn& turn, const Vocabularies& vocab,
                            const Ontology& ontology, const GenerateConfig& cfg, bool with_trace = false);

// Pipeline variant: acts (and their hidden states) come from `act_model`.
template <typename Real>
GeneratedTurn generate_turn(const CogenModel<Real>& act_model, const CogenModel<Real>& response_model,
                            const EncodedTurn& turn, const Vocabularies& vocab, const Ontology& ontology,
                            const GenerateConfig& cfg, bool with_trace = false);

}  // namespace cogen
