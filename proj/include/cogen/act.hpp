#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace cogen {

inline constexpr std::string_view kSosToken = "<sos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

struct ActTriple {
  std::string domain;
  std::string action;
  std::string slot;

  auto operator<=>(const ActTriple&) const = default;
};

using ActSet = std::set<ActTriple>;
using ActSequence = std::vector<std::string>;

enum class ActLevel { domain, action, slot };

// Closed act vocabulary. Items within each level are kept in dictionary order.
// A surface string that appears at more than one level gets a "#level" suffix
// in its token form at every level it appears.
class Ontology {
 public:
  Ontology() = default;
  Ontology(std::vector<std::string> domains, std::vector<std::string> actions, std::vector<std::string> slots,
           std::set<std::string> no_entity_domains = {});

  // Text format: "[domains]", "[actions]", "[slots]" sections, one item per
  // line; a domain line may carry the flag "no-entity". '#' starts a comment
  // line. Throws DataError.
  static Ontology parse(std::string_view text);
  static Ontology load(const std::filesystem::path& path);
  std::string serialize() const;

  const std::vector<std::string>& domains() const { return domains_; }
  const std::vector<std::string>& actions() const { return actions_; }
  const std::vector<std::string>& slots() const { return slots_; }
  const std::vector<std::string>& items(ActLevel level) const;
  // Whether a dialogue goal in this domain needs an offered entity.
  bool requires_entity(const std::string& domain) const { return !no_entity_.count(domain); }
  const std::set<std::string>& no_entity_domains() const { return no_entity_; }

  bool contains(ActLevel level, const std::string& item) const;
  // Throws VocabularyError for items outside the ontology.
  std::string token(ActLevel level, const std::string& item) const;
  // Level and item name of a token, if it belongs to the ontology.
  std::optional<std::pair<ActLevel, std::string>> lookup(const std::string& token) const;
  // Position of an item within its level, or throws VocabularyError.
  std::size_t index(ActLevel level, const std::string& item) const;
  // Every token, domains then actions then slots.
  std::vector<std::string> tokens() const;
  std::size_t onehot_size() const { return domains_.size() + actions_.size() + slots_.size(); }

 private:
  void index_tokens();

  std::vector<std::string> domains_, actions_, slots_;
  std::set<std::string> no_entity_;
  std::map<std::string, std::pair<ActLevel, std::string>> by_token_;
  std::map<std::string, std::string> token_of_[3];
};

// Linear form: <sos>, then per domain its token, per action its token and the
// slots, all in dictionary order with duplicates merged, then <eos>.
ActSequence canonicalize(const ActSet& acts, const Ontology& ontology);

struct ParseResult {
  ActSet acts;
  std::size_t skipped = 0;  // tokens ignored because they were out of scope or unknown
};

// Scope scan over possibly malformed sequences. A leading <sos> is consumed
// and scanning stops at the first <eos>. Never throws.
ParseResult parse_acts(const ActSequence& seq, const Ontology& ontology);

using ActOneHot = std::vector<std::uint8_t>;

ActOneHot to_onehot(const ActSet& acts, const Ontology& ontology);
// Lossy inverse: every (domain, action, slot) combination of the set bits,
// canonicalized. Throws DimensionError on a length mismatch.
ActSequence from_onehot(const ActOneHot& v, const Ontology& ontology);

struct ActCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  ActCounts& operator+=(const ActCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct PrecisionRecall {
  double precision = 0, recall = 0, f1 = 0;
};

ActCounts act_counts(const ActSet& predicted, const ActSet& gold);
// Both sets empty scores (1, 1, 1).
PrecisionRecall act_f1(const ActCounts& counts);
PrecisionRecall act_f1(const ActSet& predicted, const ActSet& gold);
// Micro average over turns.
PrecisionRecall act_f1_corpus(const std::vector<ActSet>& predicted, const std::vector<ActSet>& gold);

}  // namespace cogen
