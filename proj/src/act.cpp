#include "cogen/act.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "cogen/error.hpp"
#include "cogen/io.hpp"

namespace cogen {

namespace {

constexpr const char* kLevelNames[] = {"domain", "action", "slot"};

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

void check_item(const std::string& item, ActLevel level) {
  const auto bad = [&](const std::string& why) {
    throw DataError(std::string("ontology ") + kLevelNames[static_cast<int>(level)] + " '" + item + "': " + why);
  };
  if (item.empty()) bad("empty item");
  for (char c : item) {
    if (std::isspace(static_cast<unsigned char>(c))) bad("contains whitespace");
    if (std::isupper(static_cast<unsigned char>(c))) bad("must be lowercase");
    if (c == '#' || c == '<' || c == '>' || c == '[' || c == ']') bad("contains a reserved character");
  }
}

std::vector<std::string> sorted_unique(std::vector<std::string> v, ActLevel level) {
  for (const auto& s : v) check_item(s, level);
  std::sort(v.begin(), v.end());
  if (auto it = std::adjacent_find(v.begin(), v.end()); it != v.end()) {
    throw DataError(std::string("ontology: duplicate ") + kLevelNames[static_cast<int>(level)] + " '" + *it + "'");
  }
  return v;
}

}  // namespace

Ontology::Ontology(std::vector<std::string> domains, std::vector<std::string> actions,
                   std::vector<std::string> slots, std::set<std::string> no_entity_domains)
    : domains_(sorted_unique(std::move(domains), ActLevel::domain)),
      actions_(sorted_unique(std::move(actions), ActLevel::action)),
      slots_(sorted_unique(std::move(slots), ActLevel::slot)),
      no_entity_(std::move(no_entity_domains)) {
  for (const auto& d : no_entity_) {
    if (!std::binary_search(domains_.begin(), domains_.end(), d)) {
      throw DataError("ontology: no-entity flag on unknown domain '" + d + "'");
    }
  }
  index_tokens();
}

void Ontology::index_tokens() {
  std::map<std::string, int> levels_of;
  for (int l = 0; l < 3; ++l) {
    for (const auto& item : items(static_cast<ActLevel>(l))) ++levels_of[item];
  }
  for (int l = 0; l < 3; ++l) {
    const auto level = static_cast<ActLevel>(l);
    for (const auto& item : items(level)) {
      const std::string tok = levels_of[item] > 1 ? item + "#" + kLevelNames[l] : item;
      token_of_[l][item] = tok;
      by_token_[tok] = {level, item};
    }
  }
}

Ontology Ontology::parse(std::string_view text) {
  std::vector<std::string> lists[3];
  std::set<std::string> no_entity;
  int section = -1;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      const std::string name = line.substr(1, line.size() - 2);
      if (name == "domains") section = 0;
      else if (name == "actions") section = 1;
      else if (name == "slots") section = 2;
      else throw DataError("ontology line " + std::to_string(line_no) + ": unknown section [" + name + "]");
      continue;
    }
    if (section < 0) throw DataError("ontology line " + std::to_string(line_no) + ": item before any section");
    std::istringstream fields(line);
    std::string item, flag;
    fields >> item;
    if (fields >> flag) {
      if (section != 0 || flag != "no-entity") {
        throw DataError("ontology line " + std::to_string(line_no) + ": unexpected '" + flag + "'");
      }
      no_entity.insert(item);
    }
    lists[section].push_back(item);
  }
  return Ontology(std::move(lists[0]), std::move(lists[1]), std::move(lists[2]), std::move(no_entity));
}

Ontology Ontology::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string Ontology::serialize() const {
  std::string out = "[domains]\n";
  for (const auto& d : domains_) out += d + (no_entity_.count(d) ? " no-entity\n" : "\n");
  out += "[actions]\n";
  for (const auto& a : actions_) out += a + "\n";
  out += "[slots]\n";
  for (const auto& s : slots_) out += s + "\n";
  return out;
}

const std::vector<std::string>& Ontology::items(ActLevel level) const {
  switch (level) {
    case ActLevel::domain: return domains_;
    case ActLevel::action: return actions_;
    default: return slots_;
  }
}

bool Ontology::contains(ActLevel level, const std::string& item) const {
  return token_of_[static_cast<int>(level)].count(item) != 0;
}

std::string Ontology::token(ActLevel level, const std::string& item) const {
  const auto& m = token_of_[static_cast<int>(level)];
  auto it = m.find(item);
  if (it == m.end()) {
    throw VocabularyError(std::string("unknown ") + kLevelNames[static_cast<int>(level)] + " '" + item + "'");
  }
  return it->second;
}

std::optional<std::pair<ActLevel, std::string>> Ontology::lookup(const std::string& token) const {
  auto it = by_token_.find(token);
  if (it == by_token_.end()) return std::nullopt;
  return it->second;
}

std::size_t Ontology::index(ActLevel level, const std::string& item) const {
  const auto& v = items(level);
  auto it = std::lower_bound(v.begin(), v.end(), item);
  if (it == v.end() || *it != item) {
    throw VocabularyError(std::string("unknown ") + kLevelNames[static_cast<int>(level)] + " '" + item + "'");
  }
  return static_cast<std::size_t>(it - v.begin());
}

std::vector<std::string> Ontology::tokens() const {
  std::vector<std::string> out;
  for (int l = 0; l < 3; ++l) {
    for (const auto& item : items(static_cast<ActLevel>(l))) out.push_back(token_of_[l].at(item));
  }
  return out;
}

ActSequence canonicalize(const ActSet& acts, const Ontology& ontology) {
  // ActSet is ordered lexicographically by (domain, action, slot), which is
  // exactly the three-level dictionary order.
  ActSequence seq{std::string(kSosToken)};
  const ActTriple* prev = nullptr;
  for (const auto& t : acts) {
    const std::string d = ontology.token(ActLevel::domain, t.domain);
    const std::string a = ontology.token(ActLevel::action, t.action);
    const std::string s = ontology.token(ActLevel::slot, t.slot);
    const bool new_domain = !prev || prev->domain != t.domain;
    if (new_domain) seq.push_back(d);
    if (new_domain || prev->action != t.action) seq.push_back(a);
    seq.push_back(s);
    prev = &t;
  }
  seq.emplace_back(kEosToken);
  return seq;
}

ParseResult parse_acts(const ActSequence& seq, const Ontology& ontology) {
  ParseResult r;
  std::size_t i = 0;
  if (!seq.empty() && seq[0] == kSosToken) i = 1;
  const std::string* domain = nullptr;
  const std::string* action = nullptr;
  for (; i < seq.size(); ++i) {
    if (seq[i] == kEosToken) break;
    const auto hit = ontology.lookup(seq[i]);
    if (!hit) {
      ++r.skipped;
      continue;
    }
    switch (hit->first) {
      case ActLevel::domain:
        domain = &ontology.domains()[ontology.index(ActLevel::domain, hit->second)];
        action = nullptr;
        break;
      case ActLevel::action:
        if (!domain) {
          ++r.skipped;
          break;
        }
        action = &ontology.actions()[ontology.index(ActLevel::action, hit->second)];
        break;
      case ActLevel::slot:
        if (!action) {
          ++r.skipped;
          break;
        }
        r.acts.insert({*domain, *action, hit->second});
        break;
    }
  }
  return r;
}

ActOneHot to_onehot(const ActSet& acts, const Ontology& ontology) {
  ActOneHot v(ontology.onehot_size(), 0);
  const std::size_t a0 = ontology.domains().size();
  const std::size_t s0 = a0 + ontology.actions().size();
  for (const auto& t : acts) {
    v[ontology.index(ActLevel::domain, t.domain)] = 1;
    v[a0 + ontology.index(ActLevel::action, t.action)] = 1;
    v[s0 + ontology.index(ActLevel::slot, t.slot)] = 1;
  }
  return v;
}

ActSequence from_onehot(const ActOneHot& v, const Ontology& ontology) {
  if (v.size() != ontology.onehot_size()) {
    throw DimensionError("from_onehot: vector length " + std::to_string(v.size()) + " does not match ontology size " +
                         std::to_string(ontology.onehot_size()));
  }
  const std::size_t a0 = ontology.domains().size();
  const std::size_t s0 = a0 + ontology.actions().size();
  ActSet acts;
  for (std::size_t d = 0; d < a0; ++d) {
    if (!v[d]) continue;
    for (std::size_t a = a0; a < s0; ++a) {
      if (!v[a]) continue;
      for (std::size_t s = s0; s < v.size(); ++s) {
        if (v[s]) acts.insert({ontology.domains()[d], ontology.actions()[a - a0], ontology.slots()[s - s0]});
      }
    }
  }
  return canonicalize(acts, ontology);
}

ActCounts act_counts(const ActSet& predicted, const ActSet& gold) {
  ActCounts c;
  for (const auto& t : predicted) {
    if (gold.count(t)) ++c.tp;
    else ++c.fp;
  }
  c.fn = gold.size() - c.tp;
  return c;
}

PrecisionRecall act_f1(const ActCounts& c) {
  if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0, 1.0};
  PrecisionRecall r;
  r.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  r.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  r.f1 = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return r;
}

PrecisionRecall act_f1(const ActSet& predicted, const ActSet& gold) { return act_f1(act_counts(predicted, gold)); }

PrecisionRecall act_f1_corpus(const std::vector<ActSet>& predicted, const std::vector<ActSet>& gold) {
  if (predicted.size() != gold.size()) throw DimensionError("act_f1_corpus: prediction and gold counts differ");
  ActCounts total;
  for (std::size_t i = 0; i < gold.size(); ++i) total += act_counts(predicted[i], gold[i]);
  return act_f1(total);
}

}  // namespace cogen
