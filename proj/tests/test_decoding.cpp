#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "cogen/decoding.hpp"
#include "cogen/error.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cogen;
using namespace oracle;

TEST_CASE("trigram blocking rule") {
  const std::vector<int> p = {1, 2, 3, 1, 2};
  CHECK_FALSE(trigram_allowed(p, 3));
  CHECK(trigram_allowed(p, 4));
  CHECK(trigram_allowed(std::vector<int>{1}, 1));
  CHECK(trigram_allowed(std::vector<int>{}, 1));
  CHECK_FALSE(trigram_allowed(std::vector<int>{5, 5, 5}, 5));
}

TEST_CASE("decode config validation") {
  DecodeConfig cfg;
  cfg.beam_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.beam_size = 1;
  cfg.max_len = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("beam search equals exhaustive enumeration on toy tables") {
  Rng rng(2024);
  std::size_t checked = 0;
  for (std::uint64_t t = 0; t < 50; ++t) {
    const std::size_t vocab = 2 + rng.below(3);
    DecodeConfig cfg;
    cfg.max_len = 1 + rng.below(5);
    cfg.trigram_block = t % 2 == 0;
    cfg.beam_size = 1024;  // at least vocab^max_len: no pruning
    const int sos = 0, eos = 1;
    cfg.banned = {sos};
    const ToyTable table{vocab, 1000 + t, {}};
    const auto hyp = beam_search(PrefixProvider(std::cref(table)), cfg, sos, eos);

    const Best want = exhaustive_best(table, cfg, sos, eos);
    CHECK(hyp.score == doctest::Approx(want.score).epsilon(1e-12));
    CHECK(hyp.tokens == want.tokens);
    CHECK(hyp.finished == want.finished);
    CHECK(hyp.truncated == !want.finished);
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("beam size one is greedy decoding") {
  for (std::uint64_t t = 0; t < 40; ++t) {
    DecodeConfig cfg;
    cfg.beam_size = 1;
    cfg.max_len = 12;
    cfg.trigram_block = t % 2 == 1;
    cfg.banned = {0};
    const ToyTable table{6, 77 + t, {}};
    const auto beam = beam_search(PrefixProvider(std::cref(table)), cfg, 0, 1);
    const auto greedy = greedy_search(PrefixProvider(std::cref(table)), cfg, 0, 1);
    CHECK(beam.tokens == greedy.tokens);
    CHECK(beam.score == doctest::Approx(greedy.score).epsilon(1e-12));
  }
}

TEST_CASE("stored scores recompute from logits") {
  for (std::uint64_t t = 0; t < 20; ++t) {
    DecodeConfig cfg;
    cfg.beam_size = 3;
    cfg.max_len = 10;
    const ToyTable table{5, 300 + t, {}};
    const auto hyp = beam_search(PrefixProvider(std::cref(table)), cfg, 0, 1);
    double s = 0;
    for (std::size_t i = 0; i + 1 < hyp.tokens.size(); ++i) {
      const std::vector<int> prefix(hyp.tokens.begin(), hyp.tokens.begin() + static_cast<std::ptrdiff_t>(i + 1));
      const auto l = table(prefix);
      s += l[hyp.tokens[i + 1]] - logsumexp(l);
    }
    CHECK(std::abs(s - hyp.score) < 1e-5);
    CHECK(std::abs(rescore(PrefixProvider(std::cref(table)), hyp.tokens) - hyp.score) < 1e-5);
  }
}

TEST_CASE("certain end token stops at once") {
  const PrefixProvider eos_now = [](std::span<const int>) { return std::vector<double>{0.0, 0.0, 1e9, 0.0}; };
  DecodeConfig cfg;
  const auto hyp = beam_search(eos_now, cfg, kSosId, kEosId);
  CHECK(hyp.tokens == std::vector<int>{kSosId, kEosId});
  CHECK(hyp.finished);
}

TEST_CASE("missing end token returns a truncated hypothesis") {
  const PrefixProvider never = [](std::span<const int>) { return std::vector<double>{0.0, 0.0, -1e9, 5.0, 4.0}; };
  DecodeConfig cfg;
  cfg.max_len = 6;
  cfg.trigram_block = false;
  const auto hyp = beam_search(never, cfg, kSosId, kEosId);
  CHECK(hyp.truncated);
  CHECK_FALSE(hyp.finished);
  CHECK(hyp.tokens.size() == 7);
}

TEST_CASE("blocking changes a looping decode") {
  // Always prefers "3 4 3 4 ..."; blocking must break the loop.
  const PrefixProvider loop = [](std::span<const int> prefix) {
    std::vector<double> l(6, 0.0);
    l[kEosId] = -3.0;
    l[prefix.back() == 3 ? 4 : 3] = 4.0;
    return l;
  };
  DecodeConfig on;
  on.max_len = 12;
  on.banned = {kPadId, kSosId};
  DecodeConfig off = on;
  off.trigram_block = false;
  const auto a = beam_search(loop, on, kSosId, kEosId);
  const auto b = beam_search(loop, off, kSosId, kEosId);
  CHECK_FALSE(repeats_trigram(a.tokens));
  CHECK(repeats_trigram(b.tokens));
  CHECK(a.tokens != b.tokens);
}

TEST_CASE("length normalisation changes the ranking") {
  DecodeConfig cfg;
  cfg.beam_size = 4;
  cfg.length_norm = true;
  Hypothesis shorter{{0, 1}, -2.0, true, false};
  Hypothesis longer{{0, 5, 5, 1}, -3.0, true, false};
  CHECK(ranking_score(shorter, cfg) < ranking_score(longer, cfg));
  cfg.length_norm = false;
  CHECK(ranking_score(shorter, cfg) > ranking_score(longer, cfg));
}

TEST_CASE("generated responses never repeat a trigram") {
  ToyModel toy;
  Rng rng(5);
  std::size_t repeats_without = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    CogenModel<float> model(toy.cfg, 100 + i % 10);
    const auto t = toy.turn(rng);
    GenerateConfig g;
    g.response.max_len = 30;
    const auto out = generate_turn(model, t, toy.vocab, toy.ontology, g);
    std::vector<int> seq = {kSosId};
    seq.insert(seq.end(), out.response_ids.begin(), out.response_ids.end());
    CHECK_FALSE(repeats_trigram(seq));
    g.response.trigram_block = false;
    const auto loose = generate_turn(model, t, toy.vocab, toy.ontology, g);
    std::vector<int> loose_seq = {kSosId};
    loose_seq.insert(loose_seq.end(), loose.response_ids.begin(), loose.response_ids.end());
    repeats_without += repeats_trigram(loose_seq);
  }
  MESSAGE("unblocked decodes with a repeated trigram: " << repeats_without);
}

TEST_CASE("two-pass generation and its attention trace") {
  ToyModel toy;
  Rng rng(6);
  CogenModel<float> model(toy.cfg, 3);
  const auto t = toy.turn(rng);
  const auto out = generate_turn(model, t, toy.vocab, toy.ontology, GenerateConfig{}, true);
  REQUIRE(!out.act_ids.empty());
  CHECK(out.act_ids.front() == kSosId);
  for (int id : out.response_ids) {
    CHECK(id != kPadId);
    CHECK(id != kSosId);
    CHECK(id != kEosId);
  }
  CHECK(out.response.size() == out.response_ids.size());
  const auto& m = out.act_attention;
  CHECK(m.columns.size() == out.act_ids.size());
  CHECK(m.rows.size() >= out.response_ids.size());
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < m.columns.size(); ++c) sum += m.at(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
  const std::string text = format_attention(m);
  CHECK(text.find(m.columns.front()) != std::string::npos);

  const auto again = generate_turn(model, t, toy.vocab, toy.ontology, GenerateConfig{}, true);
  CHECK(again.response_ids == out.response_ids);
  CHECK(again.act_ids == out.act_ids);

  CogenModel<float> other(toy.cfg, 4);
  const auto piped = generate_turn(other, model, t, toy.vocab, toy.ontology, GenerateConfig{});
  CHECK(piped.act_ids.front() == kSosId);
}
