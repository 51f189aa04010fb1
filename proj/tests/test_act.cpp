#include <algorithm>
#include <vector>

#include "cogen/act.hpp"
#include "cogen/error.hpp"
#include "cogen/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cogen;
using oracle::is_canonical_order;

namespace {

Ontology toy_ontology() {
  return Ontology::parse(R"(# toy
[domains]
restaurant
hotel
taxi no-entity
[actions]
inform
request
recommend
[slots]
area
address
stars
phone
price
)");
}

ActSet random_set(const Ontology& o, Rng& rng, std::size_t max_size) {
  ActSet s;
  const std::size_t n = rng.below(max_size + 1);
  for (std::size_t i = 0; i < n; ++i) {
    s.insert({rng.pick(o.domains()), rng.pick(o.actions()), rng.pick(o.slots())});
  }
  return s;
}

// Backward-search formulation of the scope rules: a slot belongs to the most
// recent action token that follows the most recent domain token.
ParseResult reference_scan(const ActSequence& seq, const Ontology& o) {
  ParseResult r;
  std::size_t begin = (!seq.empty() && seq[0] == "<sos>") ? 1 : 0;
  std::size_t end = std::find(seq.begin() + begin, seq.end(), "<eos>") - seq.begin();
  auto level_at = [&](std::size_t i) { return o.lookup(seq[i]); };
  for (std::size_t i = begin; i < end; ++i) {
    const auto hit = level_at(i);
    if (!hit) {
      ++r.skipped;
      continue;
    }
    if (hit->first == ActLevel::domain) continue;
    std::ptrdiff_t dom = -1, act = -1;
    for (std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) - 1; j >= static_cast<std::ptrdiff_t>(begin); --j) {
      const auto h = level_at(static_cast<std::size_t>(j));
      if (!h) continue;
      if (h->first == ActLevel::domain) {
        dom = j;
        break;
      }
      if (h->first == ActLevel::action && act < 0) act = j;
    }
    if (hit->first == ActLevel::action) {
      if (dom < 0) ++r.skipped;
      continue;
    }
    // A valid action needs a domain before it; `act` lies after `dom`.
    if (dom < 0 || act < 0) {
      ++r.skipped;
      continue;
    }
    r.acts.insert({o.lookup(seq[static_cast<std::size_t>(dom)])->second,
                   o.lookup(seq[static_cast<std::size_t>(act)])->second, hit->second});
  }
  return r;
}


}  // namespace

TEST_CASE("ontology parsing and serialization") {
  const auto o = toy_ontology();
  CHECK(o.domains() == std::vector<std::string>{"hotel", "restaurant", "taxi"});
  CHECK(o.actions() == std::vector<std::string>{"inform", "recommend", "request"});
  CHECK(o.slots().size() == 5);
  CHECK_FALSE(o.requires_entity("taxi"));
  CHECK(o.requires_entity("hotel"));
  CHECK(o.onehot_size() == 11);
  const auto again = Ontology::parse(o.serialize());
  CHECK(again.serialize() == o.serialize());

  CHECK_THROWS_AS(Ontology::parse("hotel\n"), DataError);
  CHECK_THROWS_AS(Ontology::parse("[domains]\nHotel\n"), DataError);
  CHECK_THROWS_AS(Ontology::parse("[domains]\nhotel\nhotel\n"), DataError);
  CHECK_THROWS_AS(Ontology::parse("[colors]\nred\n"), DataError);
  CHECK_THROWS_AS(Ontology::parse("[slots]\narea no-entity\n"), DataError);
}

TEST_CASE("level collisions are disambiguated") {
  const Ontology o({"hotel", "taxi"}, {"inform", "book"}, {"book", "area"});
  CHECK(o.token(ActLevel::action, "book") == "book#action");
  CHECK(o.token(ActLevel::slot, "book") == "book#slot");
  CHECK(o.token(ActLevel::slot, "area") == "area");
  const ActSet s{{"hotel", "book", "book"}};
  const auto seq = canonicalize(s, o);
  CHECK(seq == ActSequence{"<sos>", "hotel", "book#action", "book#slot", "<eos>"});
  CHECK(parse_acts(seq, o).acts == s);
}

TEST_CASE("canonicalize examples") {
  const auto o = toy_ontology();
  CHECK(canonicalize({}, o) == ActSequence{"<sos>", "<eos>"});
  CHECK(canonicalize({{"restaurant", "inform", "area"}, {"restaurant", "inform", "address"}, {"hotel", "request", "stars"}},
                     o) == ActSequence{"<sos>", "hotel", "request", "stars", "restaurant", "inform", "address", "area",
                                       "<eos>"});
  const std::vector<ActTriple> dup{{"hotel", "inform", "area"}, {"hotel", "inform", "area"}};
  CHECK(canonicalize(ActSet(dup.begin(), dup.end()), o) ==
        ActSequence{"<sos>", "hotel", "inform", "area", "<eos>"});
  try {
    canonicalize({{"spa", "inform", "area"}}, o);
    FAIL("expected VocabularyError");
  } catch (const VocabularyError& e) {
    CHECK(std::string(e.what()).find("spa") != std::string::npos);
  }
}

TEST_CASE("parse handles malformed sequences") {
  const auto o = toy_ontology();
  auto r = parse_acts({"<sos>", "stars", "<eos>"}, o);
  CHECK(r.acts.empty());
  CHECK(r.skipped == 1);
  r = parse_acts({}, o);
  CHECK(r.acts.empty());
  r = parse_acts({"<sos>", "hotel", "zzz", "inform", "area", "<eos>", "restaurant", "inform", "phone"}, o);
  CHECK(r.acts == ActSet{{"hotel", "inform", "area"}});
  CHECK(r.skipped == 1);
  r = parse_acts({"inform", "hotel", "area", "request", "phone", "taxi", "price"}, o);
  CHECK(r.acts == ActSet{{"hotel", "request", "phone"}});
  CHECK(r.skipped == 3);
}

TEST_CASE("round trip and ordering properties over random sets") {
  const auto o = toy_ontology();
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto s = random_set(o, rng, 10);
    const auto seq = canonicalize(s, o);
    CHECK(is_canonical_order(seq, o));
    const auto r = parse_acts(seq, o);
    CHECK(r.acts == s);
    CHECK(r.skipped == 0);
    CHECK(canonicalize(r.acts, o) == seq);
  }
}

TEST_CASE("parse agrees with a reference scanner on shuffled sequences") {
  const auto o = toy_ontology();
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    auto seq = canonicalize(random_set(o, rng, 8), o);
    std::vector<std::string> body(seq.begin() + 1, seq.end() - 1);
    if (rng.bernoulli(0.3)) body.push_back("garbage");
    rng.shuffle(body);
    ActSequence shuffled{"<sos>"};
    shuffled.insert(shuffled.end(), body.begin(), body.end());
    shuffled.emplace_back("<eos>");
    const auto got = parse_acts(shuffled, o);
    const auto want = reference_scan(shuffled, o);
    CHECK(got.acts == want.acts);
    CHECK(got.skipped == want.skipped);
  }
}

TEST_CASE("one-hot conversion") {
  const auto o = toy_ontology();
  CHECK(to_onehot({}, o) == ActOneHot(11, 0));
  const auto v = to_onehot({{"hotel", "request", "stars"}}, o);
  CHECK(std::count(v.begin(), v.end(), 1) == 3);
  CHECK(v[0] == 1);      // hotel
  CHECK(v[3 + 2] == 1);  // request
  CHECK(v[6 + 4] == 1);  // stars
  CHECK_THROWS_AS(from_onehot(ActOneHot(10, 0), o), DimensionError);
  // Lossy: two triples sharing nothing expand to the cross product.
  const auto seq = from_onehot(to_onehot({{"hotel", "inform", "area"}, {"taxi", "request", "phone"}}, o), o);
  CHECK(parse_acts(seq, o).acts.size() == 8);
}

TEST_CASE("one-hot round trip is a fixpoint, exhaustively on small ontologies") {
  const std::vector<std::string> domains{"a", "b", "c"}, actions{"x", "y", "z"}, slots{"p", "q", "r"};
  auto first = [](const std::vector<std::string>& v, std::size_t n) {
    return std::vector<std::string>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n));
  };
  for (std::size_t nd = 1; nd <= 3; ++nd)
    for (std::size_t na = 1; na <= 3; ++na)
      for (std::size_t ns = 1; ns <= 3; ++ns) {
        const Ontology o(first(domains, nd), first(actions, na), first(slots, ns));
        const std::size_t n = o.onehot_size();
        for (std::size_t bits = 0; bits < (1u << n); ++bits) {
          ActOneHot v(n);
          for (std::size_t i = 0; i < n; ++i) v[i] = (bits >> i) & 1u;
          const auto once = to_onehot(parse_acts(from_onehot(v, o), o).acts, o);
          const auto twice = to_onehot(parse_acts(from_onehot(once, o), o).acts, o);
          CHECK(once == twice);
        }
      }
}

TEST_CASE("act F1") {
  const ActTriple a{"hotel", "inform", "area"}, b{"hotel", "inform", "stars"}, c{"taxi", "request", "phone"};
  auto r = act_f1({a, b}, {a, b});
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);
  r = act_f1({a, b}, {a, c});
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.5);
  r = act_f1({}, {});
  CHECK(r.f1 == 1.0);
  CHECK(r.precision == 1.0);
  r = act_f1({}, {a});
  CHECK(r.f1 == 0.0);
  r = act_f1({a}, {});
  CHECK(r.f1 == 0.0);
  // Micro average over turns: 1 tp, 1 fp, 2 fn.
  r = act_f1_corpus({{a, b}, {}}, {{a}, {c, b}});
  CHECK(r.precision == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(1.0 / 3.0));
  CHECK(r.f1 == doctest::Approx(0.4));

  const auto o = toy_ontology();
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_set(o, rng, 5), g = random_set(o, rng, 5);
    CHECK(act_f1(p, g).f1 == act_f1(g, p).f1);
  }
}
