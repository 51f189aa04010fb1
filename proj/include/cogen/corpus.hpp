#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cogen/act.hpp"

namespace cogen {

inline constexpr int kPadId = 0;
inline constexpr int kSosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

inline constexpr std::string_view kUserToken = "<usr>";
inline constexpr std::string_view kSystemToken = "<sys>";

// Number of database match-count buckets: 0, 1, 2-3, 4+.
inline constexpr std::size_t kDbBuckets = 4;
std::size_t db_bucket(int match_count);
std::string db_token(const std::string& domain, std::size_t bucket);

using SlotValues = std::map<std::string, std::string>;
using BeliefState = std::map<std::string, SlotValues>;

struct DomainGoal {
  SlotValues constraints;
  std::vector<std::string> requested;

  bool operator==(const DomainGoal&) const = default;
};

using Goal = std::map<std::string, DomainGoal>;

// One exchange as stored on disk.
struct RawTurn {
  std::string user;
  std::string response;  // delexicalized
  BeliefState belief;
  std::map<std::string, int> db;
  std::vector<ActTriple> acts;

  bool operator==(const RawTurn&) const = default;
};

struct Dialogue {
  std::string dialogue_id;
  Goal goal;
  std::vector<RawTurn> turns;

  bool operator==(const Dialogue&) const = default;
};

enum class Speaker { user, system };

struct Utterance {
  Speaker speaker;
  std::vector<std::string> tokens;
};

// One system turn with its full prior history U_1, R_1, ..., U_t.
struct DialogueTurn {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::vector<Utterance> history;  // the last entry is the current user utterance
  std::map<std::string, int> db;
  BeliefState belief;
  ActSet gold_acts;
  std::vector<std::string> gold_response;
  const Goal* goal = nullptr;  // owned by the corpus
};

// Lowercases and splits on whitespace and punctuation; placeholders such as
// "[restaurant_name]" stay single tokens.
std::vector<std::string> tokenize(std::string_view text);
// True for tokens of the form "[domain_slot]".
bool is_placeholder(std::string_view token);
std::string join_tokens(const std::vector<std::string>& tokens);

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Dialogue> dialogues);

  // Throws DataError naming the dialogue and field path on schema violations.
  static Corpus parse_json(std::string_view text);
  static Corpus load(const std::filesystem::path& path);
  std::string to_json() const;
  void save(const std::filesystem::path& path) const;

  const std::vector<Dialogue>& dialogues() const { return dialogues_; }
  // One entry per system turn, in dialogue order.
  const std::vector<DialogueTurn>& turns() const { return turns_; }
  // Checks acts, belief and goal items against the ontology; throws DataError.
  void validate(const Ontology& ontology) const;

  // Non-copyable views point into dialogues_, so copying rebuilds them.
  Corpus(const Corpus& other) : Corpus(other.dialogues_) {}
  Corpus& operator=(const Corpus& other) {
    if (this != &other) *this = Corpus(other.dialogues_);
    return *this;
  }
  Corpus(Corpus&&) = default;
  Corpus& operator=(Corpus&&) = default;

 private:
  void expand();

  std::vector<Dialogue> dialogues_;
  std::vector<DialogueTurn> turns_;
};

// Token <-> id bijection with the four reserved ids fixed.
class Vocab {
 public:
  Vocab();
  // Tokens with count >= min_freq, ordered by descending count then
  // lexicographically, after the reserved ids and any `forced` tokens.
  static Vocab build(const std::map<std::string, std::size_t>& counts, std::size_t min_freq,
                     const std::vector<std::string>& forced = {});
  static Vocab from_tokens(const std::vector<std::string>& tokens);  // tokens after the reserved four

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  // Unknown tokens map to <unk>.
  int id(const std::string& token) const;
  // Throws VocabularyError for unknown tokens.
  int strict_id(const std::string& token) const;
  // Throws IndexError when out of range.
  const std::string& token(int id) const;
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::string serialize() const;  // one token per line
  static Vocab parse(std::string_view text);
  std::uint64_t hash() const;

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct Vocabularies {
  Vocab words;  // shared by source history and responses
  Vocab acts;   // closed: reserved + ontology tokens
};

Vocab act_vocab(const Ontology& ontology);
Vocabularies build_vocab(const std::vector<DialogueTurn>& turns, const Ontology& ontology, std::size_t min_freq);

// Length of the belief vector: (domain, slot) filled flags plus db buckets per domain.
std::size_t belief_size(const Ontology& ontology);
std::vector<float> belief_vector(const BeliefState& belief, const std::map<std::string, int>& db,
                                 const Ontology& ontology);

// Source = history with speaker tokens, then db tokens.
std::vector<std::string> source_tokens(const DialogueTurn& turn);

struct EncodedTurn {
  std::vector<int> source;
  std::vector<std::uint8_t> act_mask;   // current utterance + db tokens
  std::vector<std::uint8_t> resp_mask;  // everything
  std::size_t truncated = 0;            // history tokens dropped from the front
  std::vector<int> acts;                // <sos> ... <eos>
  std::vector<int> response;            // <sos> ... <eos>
  std::vector<float> belief;
};

EncodedTurn encode_turn(const DialogueTurn& turn, const Vocabularies& vocab, const Ontology& ontology,
                        std::size_t max_seq_len);

struct Batch {
  std::size_t rows = 0;
  std::size_t source_len = 0, act_len = 0, response_len = 0;
  std::vector<int> source;               // rows x source_len, padded with <pad>
  std::vector<std::uint8_t> source_mask; // real tokens
  std::vector<std::uint8_t> act_mask;    // dual mask for the act encoder pass
  std::vector<int> acts;                 // rows x act_len
  std::vector<int> response;             // rows x response_len
  std::vector<float> belief;             // rows x belief width
  std::vector<std::size_t> turn_index;   // positions in the encoded turn list

  // Unpadded views of one row.
  std::vector<int> row_source(std::size_t r) const;
  std::vector<std::uint8_t> row_act_mask(std::size_t r) const;
  std::vector<int> row_acts(std::size_t r) const;
  std::vector<int> row_response(std::size_t r) const;
  std::vector<float> row_belief(std::size_t r) const;
};

// Shuffles with `seed` and pads each batch to its own maximum lengths.
std::vector<Batch> batchify(const std::vector<EncodedTurn>& turns, std::size_t batch_size, std::uint64_t seed);

// Template-based synthetic corpus. Every system act is determined by the
// current user utterance, the database bucket tokens and the belief state.
struct SynthDomain {
  std::string name;
  std::vector<std::pair<std::string, std::vector<std::string>>> constraints;  // slot, values
  std::vector<std::string> requestable;
};

struct SynthSpec {
  std::size_t dialogues = 200;
  std::uint64_t seed = 1;
  double multi_domain_rate = 0.2;
  std::vector<SynthDomain> domains = default_synth_domains();

  static std::vector<SynthDomain> default_synth_domains();
};

Ontology synth_ontology(const SynthSpec& spec);
Corpus synth_generate(const SynthSpec& spec);

}  // namespace cogen
