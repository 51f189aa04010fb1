#include "cogen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <sstream>

#include "cogen/error.hpp"
#include "cogen/io.hpp"
#include "cogen/rng.hpp"
#include "json.hpp"

namespace cogen {

using nlohmann::json;

std::size_t db_bucket(int match_count) {
  if (match_count <= 0) return 0;
  if (match_count == 1) return 1;
  if (match_count <= 3) return 2;
  return 3;
}

std::string db_token(const std::string& domain, std::size_t bucket) {
  static const char* names[] = {"0", "1", "2-3", "4+"};
  return "<db:" + domain + ":" + names[bucket] + ">";
}

namespace {

bool placeholder_body(std::string_view body) {
  if (body.empty()) return false;
  for (char c : body) {
    if (!(std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_')) {
      return false;
    }
  }
  return true;
}

}  // namespace

bool is_placeholder(std::string_view token) {
  if (token.size() < 5 || token.front() != '[' || token.back() != ']') return false;
  const auto body = token.substr(1, token.size() - 2);
  const auto us = body.find('_');
  return placeholder_body(body) && us != std::string_view::npos && us > 0 && us + 1 < body.size();
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (c == '[') {
      const auto close = text.find(']', i);
      std::string lowered;
      if (close != std::string_view::npos) {
        for (char ch : text.substr(i + 1, close - i - 1)) {
          lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        }
      }
      flush();
      if (close != std::string_view::npos && placeholder_body(lowered)) {
        out.push_back("[" + lowered + "]");
        i = close;
      } else {
        out.emplace_back("[");
      }
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

Corpus::Corpus(std::vector<Dialogue> dialogues) : dialogues_(std::move(dialogues)) { expand(); }

void Corpus::expand() {
  turns_.clear();
  for (const auto& d : dialogues_) {
    std::vector<Utterance> history;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const auto& raw = d.turns[t];
      history.push_back({Speaker::user, tokenize(raw.user)});
      DialogueTurn turn;
      turn.dialogue_id = d.dialogue_id;
      turn.turn_index = t;
      turn.history = history;
      turn.db = raw.db;
      turn.belief = raw.belief;
      turn.gold_acts = ActSet(raw.acts.begin(), raw.acts.end());
      turn.gold_response = tokenize(raw.response);
      turn.goal = &d.goal;
      turns_.push_back(std::move(turn));
      history.push_back({Speaker::system, tokenize(raw.response)});
    }
  }
}

namespace {

[[noreturn]] void schema_error(const std::string& dialogue, const std::string& path, const std::string& what) {
  throw DataError("corpus: dialogue '" + dialogue + "' at " + path + ": " + what);
}

const json& field(const json& obj, const char* key, const std::string& dialogue, const std::string& path) {
  if (!obj.is_object()) schema_error(dialogue, path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(dialogue, path + "." + key, "missing field");
  return *it;
}

std::string as_string(const json& j, const std::string& dialogue, const std::string& path) {
  if (!j.is_string()) schema_error(dialogue, path, "expected a string");
  return j.get<std::string>();
}

SlotValues slot_values(const json& j, const std::string& dialogue, const std::string& path) {
  if (!j.is_object()) schema_error(dialogue, path, "expected an object of slot values");
  SlotValues out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = as_string(it.value(), dialogue, path + "." + it.key());
  return out;
}

Dialogue parse_dialogue(const json& j, std::size_t index) {
  Dialogue d;
  const std::string fallback = "#" + std::to_string(index);
  if (!j.is_object()) schema_error(fallback, "", "expected a dialogue object");
  d.dialogue_id = as_string(field(j, "dialogue_id", fallback, ""), fallback, "dialogue_id");
  const auto& id = d.dialogue_id;
  const json& goal = field(j, "goal", id, "");
  if (!goal.is_object()) schema_error(id, "goal", "expected an object");
  for (auto it = goal.begin(); it != goal.end(); ++it) {
    const std::string path = "goal." + it.key();
    DomainGoal g;
    g.constraints = slot_values(field(it.value(), "constraints", id, path), id, path + ".constraints");
    const json& req = field(it.value(), "requested", id, path);
    if (!req.is_array()) schema_error(id, path + ".requested", "expected an array");
    for (std::size_t r = 0; r < req.size(); ++r) {
      g.requested.push_back(as_string(req[r], id, path + ".requested[" + std::to_string(r) + "]"));
    }
    d.goal[it.key()] = std::move(g);
  }
  const json& turns = field(j, "turns", id, "");
  if (!turns.is_array()) schema_error(id, "turns", "expected an array");
  for (std::size_t t = 0; t < turns.size(); ++t) {
    const std::string path = "turns[" + std::to_string(t) + "]";
    const json& tj = turns[t];
    RawTurn turn;
    turn.user = as_string(field(tj, "user", id, path), id, path + ".user");
    turn.response = as_string(field(tj, "response", id, path), id, path + ".response");
    const json& belief = field(tj, "belief", id, path);
    if (!belief.is_object()) schema_error(id, path + ".belief", "expected an object");
    for (auto it = belief.begin(); it != belief.end(); ++it) {
      turn.belief[it.key()] = slot_values(it.value(), id, path + ".belief." + it.key());
    }
    const json& db = field(tj, "db", id, path);
    if (!db.is_object()) schema_error(id, path + ".db", "expected an object");
    for (auto it = db.begin(); it != db.end(); ++it) {
      if (!it.value().is_number_integer() || it.value().get<long long>() < 0) {
        schema_error(id, path + ".db." + it.key(), "expected a non-negative integer");
      }
      turn.db[it.key()] = it.value().get<int>();
    }
    const json& acts = field(tj, "acts", id, path);
    if (!acts.is_array()) schema_error(id, path + ".acts", "expected an array");
    for (std::size_t a = 0; a < acts.size(); ++a) {
      const std::string apath = path + ".acts[" + std::to_string(a) + "]";
      if (!acts[a].is_array() || acts[a].size() != 3) schema_error(id, apath, "expected [domain, action, slot]");
      turn.acts.push_back({as_string(acts[a][0], id, apath), as_string(acts[a][1], id, apath),
                           as_string(acts[a][2], id, apath)});
    }
    for (const auto& tok : tokenize(turn.response)) {
      if (!tok.empty() && tok.front() == '[' && !is_placeholder(tok)) {
        schema_error(id, path + ".response", "malformed placeholder '" + tok + "'");
      }
    }
    if (tokenize(turn.user).empty()) schema_error(id, path + ".user", "empty utterance");
    d.turns.push_back(std::move(turn));
  }
  return d;
}

json dialogue_json(const Dialogue& d) {
  json goal = json::object();
  for (const auto& [domain, g] : d.goal) {
    goal[domain] = {{"constraints", g.constraints}, {"requested", g.requested}};
  }
  json turns = json::array();
  for (const auto& t : d.turns) {
    json acts = json::array();
    for (const auto& a : t.acts) acts.push_back({a.domain, a.action, a.slot});
    json belief = json::object();
    for (const auto& [domain, slots] : t.belief) belief[domain] = slots;
    json db = json::object();
    for (const auto& [domain, n] : t.db) db[domain] = n;
    turns.push_back(
        {{"user", t.user}, {"response", t.response}, {"belief", belief}, {"db", db}, {"acts", acts}});
  }
  return {{"dialogue_id", d.dialogue_id}, {"goal", goal}, {"turns", turns}};
}

}  // namespace

Corpus Corpus::parse_json(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("corpus: invalid JSON: ") + e.what());
  }
  if (!root.is_array()) throw DataError("corpus: top level must be a list of dialogues");
  std::vector<Dialogue> dialogues;
  for (std::size_t i = 0; i < root.size(); ++i) dialogues.push_back(parse_dialogue(root[i], i));
  return Corpus(std::move(dialogues));
}

Corpus Corpus::load(const std::filesystem::path& path) { return parse_json(read_file(path)); }

std::string Corpus::to_json() const {
  json root = json::array();
  for (const auto& d : dialogues_) root.push_back(dialogue_json(d));
  return root.dump(1) + "\n";
}

void Corpus::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json()); }

void Corpus::validate(const Ontology& ontology) const {
  auto need = [&](const Dialogue& d, ActLevel level, const std::string& item, const std::string& path) {
    if (!ontology.contains(level, item)) schema_error(d.dialogue_id, path, "'" + item + "' is not in the ontology");
  };
  for (const auto& d : dialogues_) {
    for (const auto& [domain, g] : d.goal) {
      need(d, ActLevel::domain, domain, "goal");
      for (const auto& [slot, v] : g.constraints) need(d, ActLevel::slot, slot, "goal." + domain + ".constraints");
      for (const auto& slot : g.requested) need(d, ActLevel::slot, slot, "goal." + domain + ".requested");
    }
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      const std::string path = "turns[" + std::to_string(t) + "]";
      const auto& turn = d.turns[t];
      for (const auto& a : turn.acts) {
        need(d, ActLevel::domain, a.domain, path + ".acts");
        need(d, ActLevel::action, a.action, path + ".acts");
        need(d, ActLevel::slot, a.slot, path + ".acts");
      }
      for (const auto& [domain, slots] : turn.belief) {
        need(d, ActLevel::domain, domain, path + ".belief");
        for (const auto& [slot, v] : slots) need(d, ActLevel::slot, slot, path + ".belief." + domain);
      }
      for (const auto& [domain, n] : turn.db) need(d, ActLevel::domain, domain, path + ".db");
    }
  }
}

Vocab::Vocab() {
  for (auto t : {kPadToken, kSosToken, kEosToken, kUnkToken}) add(std::string(t));
}

void Vocab::add(const std::string& token) {
  if (ids_.count(token)) return;
  ids_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocab Vocab::build(const std::map<std::string, std::size_t>& counts, std::size_t min_freq,
                   const std::vector<std::string>& forced) {
  Vocab v;
  for (const auto& t : forced) v.add(t);
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, n] : kept) v.add(tok);
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) {
    if (v.contains(t)) throw DataError("vocabulary: duplicate token '" + t + "'");
    v.add(t);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

int Vocab::strict_id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw VocabularyError("token '" + token + "' is not in the vocabulary");
  return it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range [0, " + std::to_string(tokens_.size()) +
                     ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = 4; i < tokens_.size(); ++i) out += tokens_[i] + "\n";
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  std::vector<std::string> tokens;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(tokens);
}

std::uint64_t Vocab::hash() const { return fnv1a(serialize()); }

Vocab act_vocab(const Ontology& ontology) { return Vocab::from_tokens(ontology.tokens()); }

std::vector<std::string> source_tokens(const DialogueTurn& turn) {
  std::vector<std::string> out;
  for (const auto& u : turn.history) {
    out.emplace_back(u.speaker == Speaker::user ? kUserToken : kSystemToken);
    out.insert(out.end(), u.tokens.begin(), u.tokens.end());
  }
  for (const auto& [domain, n] : turn.db) out.push_back(db_token(domain, db_bucket(n)));
  return out;
}

Vocabularies build_vocab(const std::vector<DialogueTurn>& turns, const Ontology& ontology, std::size_t min_freq) {
  if (turns.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  // Each utterance is counted once: histories repeat earlier turns, so only
  // the newest user utterance and the response of every turn are counted.
  for (const auto& t : turns) {
    for (const auto& tok : t.history.back().tokens) ++counts[tok];
    for (const auto& tok : t.gold_response) ++counts[tok];
  }
  std::vector<std::string> forced{std::string(kUserToken), std::string(kSystemToken)};
  for (const auto& d : ontology.domains()) {
    for (std::size_t b = 0; b < kDbBuckets; ++b) forced.push_back(db_token(d, b));
  }
  return {Vocab::build(counts, min_freq, forced), act_vocab(ontology)};
}

std::size_t belief_size(const Ontology& ontology) {
  return ontology.domains().size() * (ontology.slots().size() + kDbBuckets);
}

std::vector<float> belief_vector(const BeliefState& belief, const std::map<std::string, int>& db,
                                 const Ontology& ontology) {
  const std::size_t n_slots = ontology.slots().size();
  const std::size_t flags = ontology.domains().size() * n_slots;
  std::vector<float> v(belief_size(ontology), 0.0f);
  for (const auto& [domain, slots] : belief) {
    const std::size_t d = ontology.index(ActLevel::domain, domain);
    for (const auto& [slot, value] : slots) {
      if (!value.empty()) v[d * n_slots + ontology.index(ActLevel::slot, slot)] = 1.0f;
    }
  }
  for (const auto& [domain, n] : db) {
    v[flags + ontology.index(ActLevel::domain, domain) * kDbBuckets + db_bucket(n)] = 1.0f;
  }
  return v;
}

EncodedTurn encode_turn(const DialogueTurn& turn, const Vocabularies& vocab, const Ontology& ontology,
                        std::size_t max_seq_len) {
  EncodedTurn e;
  const auto tokens = source_tokens(turn);
  const std::size_t current = turn.history.back().tokens.size() + 1;
  const std::size_t n = tokens.size();
  const std::size_t db_count = turn.db.size();
  e.source = vocab.words.encode(tokens);
  e.resp_mask.assign(n, 1);
  e.act_mask.assign(n, 0);
  for (std::size_t i = n - db_count - current; i < n; ++i) e.act_mask[i] = 1;
  if (n > max_seq_len) {
    e.truncated = n - max_seq_len;
    e.source.erase(e.source.begin(), e.source.begin() + static_cast<std::ptrdiff_t>(e.truncated));
    e.resp_mask.erase(e.resp_mask.begin(), e.resp_mask.begin() + static_cast<std::ptrdiff_t>(e.truncated));
    e.act_mask.erase(e.act_mask.begin(), e.act_mask.begin() + static_cast<std::ptrdiff_t>(e.truncated));
  }
  for (const auto& tok : canonicalize(turn.gold_acts, ontology)) e.acts.push_back(vocab.acts.strict_id(tok));
  e.response.push_back(kSosId);
  for (int id : vocab.words.encode(turn.gold_response)) e.response.push_back(id);
  e.response.push_back(kEosId);
  e.belief = belief_vector(turn.belief, turn.db, ontology);
  return e;
}

namespace {

template <typename T>
std::vector<T> row_of(const std::vector<T>& data, std::size_t width, std::size_t r, const std::vector<std::uint8_t>* mask,
                      T pad) {
  std::vector<T> out;
  for (std::size_t i = 0; i < width; ++i) {
    const T v = data[r * width + i];
    if (mask ? (*mask)[r * width + i] != 0 : v != pad) out.push_back(v);
  }
  return out;
}

}  // namespace

std::vector<int> Batch::row_source(std::size_t r) const { return row_of(source, source_len, r, &source_mask, 0); }

std::vector<std::uint8_t> Batch::row_act_mask(std::size_t r) const {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < source_len; ++i) {
    if (source_mask[r * source_len + i]) out.push_back(act_mask[r * source_len + i]);
  }
  return out;
}

std::vector<int> Batch::row_acts(std::size_t r) const { return row_of<int>(acts, act_len, r, nullptr, kPadId); }

std::vector<int> Batch::row_response(std::size_t r) const {
  return row_of<int>(response, response_len, r, nullptr, kPadId);
}

std::vector<float> Batch::row_belief(std::size_t r) const {
  const std::size_t w = rows ? belief.size() / rows : 0;
  return std::vector<float>(belief.begin() + static_cast<std::ptrdiff_t>(r * w),
                            belief.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
}

std::vector<Batch> batchify(const std::vector<EncodedTurn>& turns, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(turns.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    b.rows = std::min(batch_size, order.size() - start);
    for (std::size_t r = 0; r < b.rows; ++r) {
      const auto& t = turns[order[start + r]];
      b.source_len = std::max(b.source_len, t.source.size());
      b.act_len = std::max(b.act_len, t.acts.size());
      b.response_len = std::max(b.response_len, t.response.size());
    }
    b.source.assign(b.rows * b.source_len, kPadId);
    b.source_mask.assign(b.rows * b.source_len, 0);
    b.act_mask.assign(b.rows * b.source_len, 0);
    b.acts.assign(b.rows * b.act_len, kPadId);
    b.response.assign(b.rows * b.response_len, kPadId);
    for (std::size_t r = 0; r < b.rows; ++r) {
      const auto& t = turns[order[start + r]];
      b.turn_index.push_back(order[start + r]);
      std::copy(t.source.begin(), t.source.end(), b.source.begin() + static_cast<std::ptrdiff_t>(r * b.source_len));
      std::copy(t.resp_mask.begin(), t.resp_mask.end(),
                b.source_mask.begin() + static_cast<std::ptrdiff_t>(r * b.source_len));
      std::copy(t.act_mask.begin(), t.act_mask.end(),
                b.act_mask.begin() + static_cast<std::ptrdiff_t>(r * b.source_len));
      std::copy(t.acts.begin(), t.acts.end(), b.acts.begin() + static_cast<std::ptrdiff_t>(r * b.act_len));
      std::copy(t.response.begin(), t.response.end(),
                b.response.begin() + static_cast<std::ptrdiff_t>(r * b.response_len));
      b.belief.insert(b.belief.end(), t.belief.begin(), t.belief.end());
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<SynthDomain> SynthSpec::default_synth_domains() {
  const std::vector<std::string> areas{"north", "south", "east", "west", "centre"};
  const std::vector<std::string> prices{"cheap", "moderate", "expensive"};
  return {
      {"attraction", {{"area", areas}, {"type", {"museum", "park", "theatre", "college"}}}, {"address", "phone", "postcode"}},
      {"hotel", {{"area", areas}, {"price", prices}, {"stars", {"two", "three", "four", "five"}}}, {"address", "phone", "parking"}},
      {"restaurant",
       {{"area", areas}, {"food", {"italian", "chinese", "indian", "british"}}, {"price", prices}},
       {"address", "phone", "postcode"}},
  };
}

Ontology synth_ontology(const SynthSpec& spec) {
  std::set<std::string> slots{"name"};
  std::vector<std::string> domains;
  for (const auto& d : spec.domains) {
    domains.push_back(d.name);
    for (const auto& c : d.constraints) slots.insert(c.first);
    slots.insert(d.requestable.begin(), d.requestable.end());
  }
  return Ontology(domains, {"inform", "request"}, std::vector<std::string>(slots.begin(), slots.end()));
}

namespace {

std::string constraint_phrase(const std::string& slot, const std::string& value) {
  if (slot == "area") return "in the " + value + " area";
  if (slot == "food") return "that serves " + value + " food";
  if (slot == "price") return "in the " + value + " price range";
  if (slot == "stars") return "with " + value + " stars";
  if (slot == "type") return "that is a " + value;
  return "with " + slot + " " + value;
}

std::string request_phrase(const std::string& slot) {
  if (slot == "phone") return "phone number";
  return slot;
}

// Fragments are chosen so that no two share a leading word pair, which keeps
// every concatenation free of repeated trigrams.
std::string inform_fragment(const std::string& domain, const std::string& slot) {
  const std::string ph = "[" + domain + "_" + slot + "]";
  if (slot == "name") return "i recommend " + ph + " .";
  if (slot == "area") return "it is in the " + ph + " .";
  if (slot == "food") return "they serve " + ph + " food .";
  if (slot == "price") return "prices are " + ph + " .";
  if (slot == "stars") return "it has " + ph + " stars .";
  if (slot == "type") return "this is a " + ph + " .";
  if (slot == "address") return "the address is " + ph + " .";
  if (slot == "phone") return "call them on " + ph + " .";
  if (slot == "postcode") return "postcode is " + ph + " .";
  if (slot == "parking") return "parking is " + ph + " .";
  return slot + " : " + ph + " .";
}

std::string request_fragment(const std::string& slot) {
  if (slot == "area") return "which area do you prefer ?";
  if (slot == "food") return "what food do you want ?";
  if (slot == "price") return "what price range ?";
  if (slot == "stars") return "how many stars ?";
  if (slot == "type") return "what kind of place ?";
  return "what " + slot + " do you need ?";
}

std::string render_response(const ActSet& acts) {
  std::string out;
  for (const auto& a : acts) {
    if (!out.empty()) out += ' ';
    out += a.action == "request" ? request_fragment(a.slot) : inform_fragment(a.domain, a.slot);
  }
  return out;
}

}  // namespace

Corpus synth_generate(const SynthSpec& spec) {
  if (spec.domains.empty()) throw ConfigError("synth: at least one domain is required");
  for (const auto& d : spec.domains) {
    if (d.constraints.empty() || d.requestable.empty()) {
      throw ConfigError("synth: domain '" + d.name + "' needs constraints and requestable slots");
    }
  }
  Rng rng(spec.seed);
  const std::vector<std::string> openers{"i am looking for a", "can you help me find a", "i need a"};
  std::vector<Dialogue> dialogues;
  for (std::size_t n = 0; n < spec.dialogues; ++n) {
    Dialogue dlg;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%05zu", n);
    dlg.dialogue_id = id;
    std::vector<const SynthDomain*> active{&spec.domains[rng.below(spec.domains.size())]};
    if (spec.domains.size() > 1 && rng.bernoulli(spec.multi_domain_rate)) {
      const SynthDomain* second;
      do {
        second = &spec.domains[rng.below(spec.domains.size())];
      } while (second == active[0]);
      active.push_back(second);
    }
    BeliefState belief;
    for (const SynthDomain* dom : active) {
      const std::string& d = dom->name;
      DomainGoal goal;
      const auto& first = dom->constraints[rng.below(dom->constraints.size())];
      const std::string v1 = rng.pick(first.second);
      goal.constraints[first.first] = v1;
      const std::pair<std::string, std::vector<std::string>>* second = nullptr;
      if (dom->constraints.size() > 1 && rng.bernoulli(0.5)) {
        for (const auto& c : dom->constraints) {
          if (c.first != first.first) {
            second = &c;
            break;
          }
        }
      }
      std::string v2;
      if (second) {
        v2 = rng.pick(second->second);
        goal.constraints[second->first] = v2;
      }
      std::vector<std::string> requested = dom->requestable;
      rng.shuffle(requested);
      requested.resize(1 + rng.below(std::min<std::size_t>(2, requested.size())));
      std::sort(requested.begin(), requested.end());
      goal.requested = requested;

      auto add_turn = [&](std::string user, int db, ActSet acts) {
        RawTurn t;
        t.user = std::move(user);
        t.belief = belief;
        t.db[d] = db;
        t.acts.assign(acts.begin(), acts.end());
        t.response = render_response(acts);
        dlg.turns.push_back(std::move(t));
      };
      auto inform_offer = [&] {
        ActSet acts{{d, "inform", "name"}};
        for (const auto& [slot, v] : goal.constraints) acts.insert({d, "inform", slot});
        return acts;
      };

      belief[d][first.first] = v1;
      const std::string opener = rng.pick(openers);
      const std::string user1 = opener + " " + d + " " + constraint_phrase(first.first, v1) + " .";
      if (second) {
        add_turn(user1, 4 + static_cast<int>(rng.below(6)), {{d, "request", second->first}});
        belief[d][second->first] = v2;
        add_turn("i would like the " + d + " " + constraint_phrase(second->first, v2) + " .", 1, inform_offer());
      } else {
        add_turn(user1, 1, inform_offer());
      }
      std::string ask = "what is the ";
      ActSet answers;
      for (std::size_t r = 0; r < requested.size(); ++r) {
        if (r) ask += " and the ";
        ask += request_phrase(requested[r]);
        answers.insert({d, "inform", requested[r]});
      }
      add_turn(ask + " of the " + d + " ?", 1, answers);
      dlg.goal[d] = std::move(goal);
    }
    dialogues.push_back(std::move(dlg));
  }
  return Corpus(std::move(dialogues));
}

}  // namespace cogen
