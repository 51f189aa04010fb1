#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "cogen/corpus.hpp"
#include "cogen/error.hpp"
#include "doctest.h"

using namespace cogen;

namespace {

const std::string kFixtures = COGEN_FIXTURE_DIR;

Corpus fixture() { return Corpus::load(kFixtures + "/tiny_corpus.json"); }
Ontology fixture_ontology() { return Ontology::load(kFixtures + "/tiny.ontology"); }

using Tokens = std::vector<std::string>;

bool has_repeated_trigram(const Tokens& t) {
  std::set<std::vector<std::string>> seen;
  for (std::size_t i = 0; i + 2 < t.size(); ++i) {
    if (!seen.insert({t[i], t[i + 1], t[i + 2]}).second) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("tokenizer") {
  CHECK(tokenize("I want a Restaurant in the North.") == Tokens{"i", "want", "a", "restaurant", "in", "the", "north", "."});
  CHECK(tokenize("What's  the phone?") == Tokens{"what", "'", "s", "the", "phone", "?"});
  CHECK(tokenize("Call [Restaurant_Phone], thanks") == Tokens{"call", "[restaurant_phone]", ",", "thanks"});
  CHECK(tokenize("[x y] ok") == Tokens{"[", "x", "y", "]", "ok"});
  CHECK(tokenize("").empty());
  CHECK(is_placeholder("[restaurant_name]"));
  CHECK(is_placeholder("[hotel_post_code]"));
  CHECK_FALSE(is_placeholder("[restaurant]"));
  CHECK_FALSE(is_placeholder("[_name]"));
  CHECK_FALSE(is_placeholder("restaurant_name"));
}

TEST_CASE("loading expands dialogues into system turns") {
  CHECK(Corpus::parse_json("[]").turns().empty());
  const auto c = fixture();
  REQUIRE(c.turns().size() == 3);
  CHECK(c.turns()[0].history.size() == 1);
  CHECK(c.turns()[1].history.size() == 3);
  CHECK(c.turns()[2].history.size() == 1);
  CHECK(c.turns()[1].history[1].speaker == Speaker::system);
  CHECK(c.turns()[1].gold_response == Tokens{"call", "[restaurant_phone]", "."});
  CHECK(c.turns()[0].gold_acts == ActSet{{"restaurant", "inform", "area"}, {"restaurant", "inform", "name"}});
  CHECK(c.turns()[0].goal->at("restaurant").requested == Tokens{"phone"});
  std::size_t tokens = 0;
  for (const auto& t : c.turns()) tokens += t.history.back().tokens.size() + t.gold_response.size();
  CHECK(tokens == 30);
  CHECK_NOTHROW(c.validate(fixture_ontology()));
}

TEST_CASE("load, serialize, load is a fixpoint") {
  const auto c = fixture();
  const auto text = c.to_json();
  const auto again = Corpus::parse_json(text);
  CHECK(again.dialogues() == c.dialogues());
  CHECK(again.to_json() == text);
  const Corpus copy = again;
  CHECK(copy.turns()[1].goal == &copy.dialogues()[0].goal);
}

TEST_CASE("schema violations name the dialogue and field") {
  auto message = [](const std::string& text) {
    try {
      Corpus::parse_json(text);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("{}").find("list of dialogues") != std::string::npos);
  CHECK(message("[1").find("invalid JSON") != std::string::npos);
  const auto m = message(R"([{"dialogue_id": "x7", "goal": {}, "turns": [{"user": "hi", "response": "ok",
      "belief": {}, "db": {}, "acts": [["hotel", "inform"]]}]}])");
  CHECK(m.find("x7") != std::string::npos);
  CHECK(m.find("turns[0].acts[0]") != std::string::npos);
  CHECK(message(R"([{"dialogue_id": "x8", "goal": {}, "turns": [{"user": "hi", "response": "[hotel] ok",
      "belief": {}, "db": {}, "acts": []}]}])")
            .find("placeholder") != std::string::npos);
  CHECK(message(R"([{"dialogue_id": "x9", "goal": {}}])").find("turns") != std::string::npos);

  const auto bad = Corpus::parse_json(R"([{"dialogue_id": "y", "goal": {}, "turns": [{"user": "hi", "response": "ok",
      "belief": {}, "db": {}, "acts": [["spa", "inform", "area"]]}]}])");
  CHECK_THROWS_AS(bad.validate(fixture_ontology()), DataError);
}

TEST_CASE("vocabulary construction") {
  const auto c = fixture();
  const auto o = fixture_ontology();
  const auto v = build_vocab(c.turns(), o, 2);
  CHECK(v.acts.size() == 2 + 2 + 3 + 4);
  CHECK(v.acts.token(4) == "hotel");
  CHECK(v.acts.token(10) == "phone");
  REQUIRE(v.words.size() == 20);
  CHECK(v.words.token(0) == "<pad>");
  CHECK(v.words.token(1) == "<sos>");
  CHECK(v.words.token(2) == "<eos>");
  CHECK(v.words.token(3) == "<unk>");
  CHECK(v.words.token(4) == "<usr>");
  CHECK(v.words.token(5) == "<sys>");
  CHECK(v.words.token(6) == "<db:hotel:0>");
  CHECK(v.words.token(13) == "<db:restaurant:4+>");
  const Tokens tail(v.words.tokens().begin() + 14, v.words.tokens().end());
  CHECK(tail == Tokens{".", "the", "?", "a", "in", "north"});
  CHECK(v.words.id("phone") == kUnkId);
  CHECK_THROWS_AS(v.words.strict_id("phone"), VocabularyError);
  CHECK_THROWS_AS(v.words.token(20), IndexError);

  const auto full = build_vocab(c.turns(), o, 1);
  for (const auto& t : c.turns()) {
    for (const auto& tok : source_tokens(t)) CHECK(full.words.id(tok) != kUnkId);
    for (const auto& tok : t.gold_response) CHECK(full.words.id(tok) != kUnkId);
  }
  CHECK(Vocab::parse(full.words.serialize()).tokens() == full.words.tokens());
  CHECK(Vocab::parse(full.words.serialize()).hash() == full.words.hash());
  CHECK(build_vocab(c.turns(), o, 1).words.tokens() == full.words.tokens());
  CHECK_THROWS_AS(build_vocab({}, o, 1), DataError);
}

TEST_CASE("belief vector and turn encoding") {
  const auto c = fixture();
  const auto o = fixture_ontology();
  const auto v = build_vocab(c.turns(), o, 1);
  CHECK(belief_size(o) == 14);
  const auto b = belief_vector(c.turns()[0].belief, c.turns()[0].db, o);
  std::vector<float> want(14, 0.0f);
  want[3] = 1.0f;   // restaurant / area
  want[12] = 1.0f;  // restaurant db bucket 2-3
  CHECK(b == want);
  const auto empty = belief_vector(c.turns()[2].belief, c.turns()[2].db, o);
  CHECK(std::accumulate(empty.begin(), empty.end(), 0.0f) == 1.0f);  // only hotel bucket 0

  const auto e = encode_turn(c.turns()[1], v, o, 64);
  CHECK(e.source.size() == 24);
  CHECK(e.source.front() == v.words.id("<usr>"));
  CHECK(e.source.back() == v.words.id("<db:restaurant:1>"));
  CHECK(std::count(e.act_mask.begin(), e.act_mask.end(), 1) == 8);
  CHECK(e.act_mask[15] == 0);
  CHECK(e.act_mask[16] == 1);
  CHECK(std::count(e.resp_mask.begin(), e.resp_mask.end(), 1) == 24);
  CHECK(v.acts.decode(e.acts) == Tokens{"<sos>", "restaurant", "inform", "phone", "<eos>"});
  CHECK(v.words.decode(e.response) == Tokens{"<sos>", "call", "[restaurant_phone]", ".", "<eos>"});

  const auto t = encode_turn(c.turns()[1], v, o, 10);
  CHECK(t.truncated == 14);
  CHECK(t.source.size() == 10);
  CHECK(std::vector<int>(e.source.end() - 10, e.source.end()) == t.source);
  CHECK(std::count(t.act_mask.begin(), t.act_mask.end(), 1) == 8);
}

TEST_CASE("batching") {
  const auto c = fixture();
  const auto o = fixture_ontology();
  const auto v = build_vocab(c.turns(), o, 1);
  std::vector<EncodedTurn> enc;
  for (const auto& t : c.turns()) enc.push_back(encode_turn(t, v, o, 64));

  const auto a = batchify(enc, 2, 7);
  const auto b = batchify(enc, 2, 7);
  REQUIRE(a.size() == 2);
  CHECK(a[0].rows == 2);
  CHECK(a[1].rows == 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].turn_index == b[i].turn_index);
    CHECK(a[i].source == b[i].source);
  }
  std::size_t real = 0, expected = 0;
  for (const auto& batch : a) {
    for (std::size_t i = 0; i < batch.source.size(); ++i) {
      CHECK(batch.source[i] < static_cast<int>(v.words.size()));
      if (!batch.source_mask[i]) CHECK(batch.source[i] == kPadId);
      real += batch.source_mask[i];
    }
    for (std::size_t r = 0; r < batch.rows; ++r) {
      const auto& t = enc[batch.turn_index[r]];
      CHECK(batch.row_source(r) == t.source);
      CHECK(batch.row_act_mask(r) == t.act_mask);
      CHECK(batch.row_acts(r) == t.acts);
      CHECK(batch.row_response(r) == t.response);
      CHECK(batch.row_belief(r) == t.belief);
    }
  }
  for (const auto& t : enc) expected += t.source.size();
  CHECK(real == expected);

  const std::vector<EncodedTurn> same(3, enc[1]);
  const auto s = batchify(same, 3, 1);
  CHECK(std::count(s[0].source_mask.begin(), s[0].source_mask.end(), 0) == 0);
  CHECK_THROWS_AS(batchify(enc, 0, 1), ConfigError);
}

TEST_CASE("synthetic corpus") {
  SynthSpec empty;
  empty.dialogues = 0;
  CHECK(synth_generate(empty).to_json() == "[]\n");

  SynthSpec spec;
  spec.dialogues = 60;
  const auto o = synth_ontology(spec);
  CHECK(o.domains() == Tokens{"attraction", "hotel", "restaurant"});
  CHECK(o.actions() == Tokens{"inform", "request"});
  const auto c = synth_generate(spec);
  CHECK(c.to_json() == synth_generate(spec).to_json());
  SynthSpec other = spec;
  other.seed = 2;
  CHECK(c.to_json() != synth_generate(other).to_json());
  CHECK_NOTHROW(c.validate(o));
  CHECK(Corpus::parse_json(c.to_json()).dialogues() == c.dialogues());

  std::size_t multi = 0;
  for (const auto& d : c.dialogues()) multi += d.goal.size() > 1;
  CHECK(multi > 0);
  CHECK(multi < c.dialogues().size());
  for (const auto& t : c.turns()) {
    CHECK(parse_acts(canonicalize(t.gold_acts, o), o).acts == t.gold_acts);
    CHECK_FALSE(has_repeated_trigram(t.gold_response));
    CHECK_FALSE(t.gold_acts.empty());
    const auto& domain = t.gold_acts.begin()->domain;
    const auto& user = t.history.back().tokens;
    CHECK(std::find(user.begin(), user.end(), domain) != user.end());
    for (const auto& tok : t.gold_response) {
      if (tok.front() == '[') CHECK(is_placeholder(tok));
    }
  }
}
