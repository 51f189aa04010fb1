#include "cogen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "cogen/error.hpp"
#include "json.hpp"

namespace cogen {

namespace {

using NgramCounts = std::unordered_map<std::string, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      key += t[i + k];
      key += '\x1f';
    }
    ++out[key];
  }
  return out;
}

bool mentions(const std::vector<Tokens>& responses, const std::string& token) {
  for (const auto& r : responses) {
    if (std::find(r.begin(), r.end(), token) != r.end()) return true;
  }
  return false;
}

double percent(std::size_t k, std::size_t n) { return n ? 100.0 * static_cast<double>(k) / static_cast<double>(n) : 0.0; }

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.empty()) throw ContractError("bleu: no hypotheses");
  if (hypotheses.size() != references.size()) throw DimensionError("bleu: hypothesis and reference counts differ");
  std::size_t matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& h = hypotheses[i];
    const auto& r = references[i];
    if (r.empty()) throw ContractError("bleu: empty reference");
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = ngrams(h, n);
      const auto rc = ngrams(r, n);
      for (const auto& [g, count] : hc) {
        auto it = rc.find(g);
        if (it != rc.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (totals[n] == 0) continue;
    const double m = matches[n] ? static_cast<double>(matches[n]) : kBleuEpsilon;
    log_sum += std::log(m / static_cast<double>(totals[n]));
    ++orders;
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

bool dialogue_informed(const EvaluatedDialogue& d, const Ontology& ontology) {
  for (const auto& [domain, goal] : d.goal) {
    if (ontology.contains(ActLevel::domain, domain) && !ontology.requires_entity(domain)) continue;
    if (!mentions(d.responses, "[" + domain + "_name]")) return false;
  }
  return true;
}

bool dialogue_successful(const EvaluatedDialogue& d, const Ontology& ontology) {
  if (!dialogue_informed(d, ontology)) return false;
  for (const auto& [domain, goal] : d.goal) {
    for (const auto& slot : goal.requested) {
      if (!mentions(d.responses, "[" + domain + "_" + slot + "]")) return false;
    }
  }
  return true;
}

double inform_rate(const std::vector<EvaluatedDialogue>& dialogues, const Ontology& ontology) {
  std::size_t k = 0;
  for (const auto& d : dialogues) k += dialogue_informed(d, ontology);
  return percent(k, dialogues.size());
}

double request_success(const std::vector<EvaluatedDialogue>& dialogues, const Ontology& ontology) {
  std::size_t k = 0;
  for (const auto& d : dialogues) k += dialogue_successful(d, ontology);
  return percent(k, dialogues.size());
}

double combined_score(double inform, double success, double bleu_score) {
  return (inform + success) * 0.5 + bleu_score;
}

MetricsReport evaluate(const std::vector<EvaluatedDialogue>& dialogues, const Ontology& ontology,
                       const PrecisionRecall& act) {
  MetricsReport r;
  r.dialogues = dialogues.size();
  r.act = act;
  std::vector<Tokens> hyps, refs;
  for (const auto& d : dialogues) {
    if (d.responses.size() != d.references.size()) {
      throw DimensionError("evaluate: dialogue '" + d.dialogue_id + "' has mismatched response counts");
    }
    hyps.insert(hyps.end(), d.responses.begin(), d.responses.end());
    refs.insert(refs.end(), d.references.begin(), d.references.end());
  }
  r.turns = hyps.size();
  r.inform = inform_rate(dialogues, ontology);
  r.success = request_success(dialogues, ontology);
  r.bleu = hyps.empty() ? 0.0 : bleu(hyps, refs);
  r.combined = combined_score(r.inform, r.success, r.bleu);
  for (const auto& domain : ontology.domains()) {
    std::vector<EvaluatedDialogue> subset;
    for (const auto& d : dialogues) {
      if (d.goal.count(domain)) subset.push_back(d);
    }
    if (subset.empty()) continue;
    DomainMetrics m;
    m.dialogues = subset.size();
    m.inform = inform_rate(subset, ontology);
    m.success = request_success(subset, ontology);
    std::vector<Tokens> h, f;
    for (const auto& d : subset) {
      h.insert(h.end(), d.responses.begin(), d.responses.end());
      f.insert(f.end(), d.references.begin(), d.references.end());
    }
    m.bleu = h.empty() ? 0.0 : bleu(h, f);
    m.combined = combined_score(m.inform, m.success, m.bleu);
    r.per_domain[domain] = m;
  }
  return r;
}

std::string format_report(const MetricsReport& report, const std::string& fingerprint,
                          const std::map<std::string, std::string>& extra) {
  nlohmann::ordered_json j;
  j["config_fingerprint"] = fingerprint;
  j["dialogues"] = report.dialogues;
  j["turns"] = report.turns;
  j["inform"] = report.inform;
  j["success"] = report.success;
  j["bleu"] = report.bleu;
  j["bleu_smoothing"] = kBleuSmoothing;
  j["combined"] = report.combined;
  j["act_precision"] = report.act.precision;
  j["act_recall"] = report.act.recall;
  j["act_f1"] = report.act.f1;
  nlohmann::ordered_json domains = nlohmann::ordered_json::object();
  for (const auto& [name, m] : report.per_domain) {
    domains[name] = {{"dialogues", m.dialogues},
                     {"inform", m.inform},
                     {"success", m.success},
                     {"bleu", m.bleu},
                     {"combined", m.combined}};
  }
  j["per_domain"] = domains;
  for (const auto& [k, v] : extra) j[k] = v;
  return j.dump(2) + "\n";
}

std::string format_comparison(const std::string& title, const std::string& fingerprint,
                              const std::vector<ReportRow>& rows) {
  std::string out = "# " + title + "\n# config_fingerprint " + fingerprint + "\n# bleu_smoothing " +
                    kBleuSmoothing + "\n";
  out += "label\tact_f1\tinform\tsuccess\tbleu\tcombined\tnotes\n";
  for (const auto& row : rows) {
    const auto& m = row.metrics;
    std::string notes;
    for (const auto& [k, v] : row.notes) notes += (notes.empty() ? "" : " ") + k + "=" + v;
    out += row.label + "\t" + fixed(m.act.f1, 4) + "\t" + fixed(m.inform, 2) + "\t" + fixed(m.success, 2) + "\t" +
           fixed(m.bleu, 2) + "\t" + fixed(m.combined, 2) + "\t" + (notes.empty() ? "-" : notes) + "\n";
  }
  return out;
}

}  // namespace cogen
