#pragma once

#include <vector>

#include "cogen/decoding.hpp"
#include "cogen/metrics.hpp"

namespace cogen {

struct Evaluation {
  MetricsReport report;
  double exact_match = 0;  // percentage of turns whose acts and response both equal gold
  std::vector<GeneratedTurn> outputs;
};

// Generates every turn and scores the result. `turns` and `encoded` are
// parallel; turns of one dialogue must be contiguous.
Evaluation evaluate_generation(const CogenModel<float>& act_model, const CogenModel<float>& response_model,
                               const std::vector<DialogueTurn>& turns, const std::vector<EncodedTurn>& encoded,
                               const Vocabularies& vocab, const Ontology& ontology, const GenerateConfig& cfg);

// Scores the gold responses and acts as if they had been generated.
Evaluation evaluate_gold(const std::vector<DialogueTurn>& turns, const Ontology& ontology);

}  // namespace cogen
