#include "cogen/evaluation.hpp"

#include "cogen/error.hpp"

namespace cogen {

namespace {

Evaluation score(const std::vector<DialogueTurn>& turns, const std::vector<ActSet>& acts,
                 const std::vector<Tokens>& responses, const Ontology& ontology) {
  Evaluation ev;
  std::vector<EvaluatedDialogue> dialogues;
  std::vector<ActSet> gold_acts;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& t = turns[i];
    if (!t.goal) throw ContractError("turn of dialogue '" + t.dialogue_id + "' has no goal");
    if (dialogues.empty() || dialogues.back().dialogue_id != t.dialogue_id) {
      dialogues.push_back({t.dialogue_id, *t.goal, {}, {}});
    }
    dialogues.back().responses.push_back(responses[i]);
    dialogues.back().references.push_back(t.gold_response);
    gold_acts.push_back(t.gold_acts);
    exact += acts[i] == t.gold_acts && responses[i] == t.gold_response;
  }
  ev.report = evaluate(dialogues, ontology, act_f1_corpus(acts, gold_acts));
  ev.exact_match = turns.empty() ? 0.0 : 100.0 * static_cast<double>(exact) / static_cast<double>(turns.size());
  return ev;
}

}  // namespace

Evaluation evaluate_generation(const CogenModel<float>& act_model, const CogenModel<float>& response_model,
                               const std::vector<DialogueTurn>& turns, const std::vector<EncodedTurn>& encoded,
                               const Vocabularies& vocab, const Ontology& ontology, const GenerateConfig& cfg) {
  if (turns.size() != encoded.size()) throw ContractError("evaluate_generation: turn lists differ in length");
  if (turns.empty()) throw DataError("evaluation corpus is empty");
  std::vector<GeneratedTurn> outputs;
  std::vector<ActSet> acts;
  std::vector<Tokens> responses;
  for (const auto& e : encoded) {
    outputs.push_back(generate_turn(act_model, response_model, e, vocab, ontology, cfg));
    acts.push_back(outputs.back().acts);
    responses.push_back(outputs.back().response);
  }
  Evaluation ev = score(turns, acts, responses, ontology);
  ev.outputs = std::move(outputs);
  return ev;
}

Evaluation evaluate_gold(const std::vector<DialogueTurn>& turns, const Ontology& ontology) {
  if (turns.empty()) throw DataError("evaluation corpus is empty");
  std::vector<ActSet> acts;
  std::vector<Tokens> responses;
  for (const auto& t : turns) {
    acts.push_back(t.gold_acts);
    responses.push_back(t.gold_response);
  }
  return score(turns, acts, responses, ontology);
}

}  // namespace cogen
