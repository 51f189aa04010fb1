#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cogen/act.hpp"
#include "cogen/corpus.hpp"

namespace cogen {

using Tokens = std::vector<std::string>;

// Added to a zero n-gram match count before taking logs.
inline constexpr double kBleuEpsilon = 1e-9;
inline constexpr const char* kBleuSmoothing = "epsilon-1e-9";

// Corpus-level BLEU-4 in [0, 100] with brevity penalty. An order for which
// the hypotheses contain no n-grams at all is left out of the geometric mean,
// so bleu(h, h) = 100 also for hypotheses shorter than four tokens.
double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

// One dialogue's generated system responses alongside the gold ones.
struct EvaluatedDialogue {
  std::string dialogue_id;
  Goal goal;
  std::vector<Tokens> responses;
  std::vector<Tokens> references;
};

bool dialogue_informed(const EvaluatedDialogue& d, const Ontology& ontology);
bool dialogue_successful(const EvaluatedDialogue& d, const Ontology& ontology);
double inform_rate(const std::vector<EvaluatedDialogue>& dialogues, const Ontology& ontology);
double request_success(const std::vector<EvaluatedDialogue>& dialogues, const Ontology& ontology);
double combined_score(double inform, double success, double bleu);

struct DomainMetrics {
  std::size_t dialogues = 0;
  double inform = 0, success = 0, bleu = 0, combined = 0;
};

struct MetricsReport {
  std::size_t dialogues = 0;
  std::size_t turns = 0;
  double inform = 0, success = 0, bleu = 0, combined = 0;
  PrecisionRecall act{};
  std::map<std::string, DomainMetrics> per_domain;  // over dialogues whose goal includes the domain
};

MetricsReport evaluate(const std::vector<EvaluatedDialogue>& dialogues, const Ontology& ontology,
                       const PrecisionRecall& act);

// JSON with every report field, the smoothing mode and the config fingerprint.
std::string format_report(const MetricsReport& report, const std::string& fingerprint,
                          const std::map<std::string, std::string>& extra = {});

struct ReportRow {
  std::string label;
  MetricsReport metrics;
  std::map<std::string, std::string> notes;
};

// Plain-text table: label, act F1, inform, success, bleu, combined, notes.
std::string format_comparison(const std::string& title, const std::string& fingerprint,
                              const std::vector<ReportRow>& rows);

}  // namespace cogen
