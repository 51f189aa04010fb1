#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cogen/error.hpp"
#include "cogen/io.hpp"
#include "cogen/run.hpp"
#include "json.hpp"

using namespace cogen;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // key -> value, applied last
};

// Defaults, then the config file, then --set, then dedicated flags.
RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config_file.empty()) cfg = RunConfig::load(c.config_file, cfg);
  for (const auto& s : c.sets) cfg.assign(s);
  for (const auto& [k, v] : c.flags) {
    if (!v.empty()) cfg.set(k, v);
  }
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_file, "key=value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override one config key (key=value), repeatable");
}

void flag(CLI::App* app, Common& c, const std::string& name, const std::string& key, const std::string& help) {
  app->add_option(name, c.flags[key], help);
}

const std::string& need(const RunConfig& cfg, const std::string& key) {
  const auto& v = cfg.text(key);
  if (v.empty()) throw ConfigError("missing required setting '" + key + "'");
  return v;
}

void info(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

Dataset load_dataset(const RunConfig& cfg, const std::string& corpus_key,
                     const std::optional<Vocabularies>& vocab = std::nullopt) {
  const std::string& path = cfg.text(corpus_key).empty() ? need(cfg, "corpus") : cfg.text(corpus_key);
  Dataset d = prepare_dataset(Corpus::load(path), Ontology::load(need(cfg, "ontology")), cfg, vocab);
  if (d.corpus.turns().empty()) throw DataError(path + ": corpus has no turns");
  if (d.truncated_turns) info(std::to_string(d.truncated_turns) + " turns truncated to max_seq_len");
  return d;
}

std::string corpus_hash(const RunConfig& cfg) { return hex_digest(fnv1a(read_file(need(cfg, "corpus")))); }

std::string log_text(const std::string& fingerprint, const std::vector<std::string>& lines) {
  std::string out = "# fingerprint=" + fingerprint + "\n";
  for (const auto& l : lines) out += l + "\n";
  return out;
}

void split_lines(const std::string& text, std::vector<std::string>& out) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    if (!line.empty() && line[0] != '#') out.push_back(line);
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
}

// ---- synth ----

int cmd_synth(const Common& c) {
  const RunConfig cfg = resolve(c);
  const SynthSpec spec = cfg.synth_spec();
  const Corpus corpus = synth_generate(spec);
  corpus.save(need(cfg, "corpus"));
  if (!cfg.text("ontology").empty()) write_file_atomic(cfg.text("ontology"), synth_ontology(spec).serialize());
  info("wrote " + std::to_string(corpus.dialogues().size()) + " dialogues (" +
       std::to_string(corpus.turns().size()) + " turns) to " + cfg.text("corpus"));
  return kOk;
}

// ---- train ----

void write_comparison(const RunConfig& cfg, const std::string& title, const std::vector<ReportRow>& rows) {
  const std::string table = format_comparison(title, cfg.fingerprint(), rows);
  std::cout << table;
  if (!cfg.text("report").empty()) write_file_atomic(cfg.text("report"), table);
}

int train_sweep(const RunConfig& cfg) {
  const Dataset train = load_dataset(cfg, "corpus");
  const Dataset eval = load_dataset(cfg, "eval_corpus", train.vocab);
  std::vector<std::uint64_t> seeds;
  for (long long i = 0; i < cfg.integer("sweep_seeds"); ++i) seeds.push_back(static_cast<std::uint64_t>(cfg.integer("seed") + i));
  const auto result = run_sweep(cfg, train, eval, seeds, info);
  write_comparison(cfg, "loss-mode sweep", result.rows);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    info("seed " + std::to_string(seeds[i]) + ": uncertainty ranks " + std::to_string(result.uncertainty_rank[i]) +
         " of " + std::to_string(sweep_modes().size()));
  }
  return kOk;
}

int train_ablation(const RunConfig& cfg) {
  const Dataset train = load_dataset(cfg, "corpus");
  const Dataset eval = load_dataset(cfg, "eval_corpus", train.vocab);
  write_comparison(cfg, "joint vs pipeline", run_ablation(cfg, train, eval, info));
  return kOk;
}

int cmd_train(const Common& c, bool resume, bool sweep, bool ablation) {
  const RunConfig cfg = resolve(c);
  if (sweep) return train_sweep(cfg);
  if (ablation) return train_ablation(cfg);

  const std::string ckpt_path = need(cfg, "checkpoint");
  std::optional<ModelBundle> act_bundle;
  std::optional<Vocabularies> vocab;
  if (cfg.text("phase") == "response") {
    act_bundle = load_bundle(need(cfg, "act_checkpoint"));
    vocab = act_bundle->vocab;
  }
  const Dataset data = load_dataset(cfg, "corpus", vocab);
  if (act_bundle) verify_ontology(*act_bundle, data.ontology);

  CogenModel<float> model(cfg.model_config(data.vocab, data.ontology), static_cast<std::uint64_t>(cfg.integer("seed")));
  Trainer trainer(model, data.encoded, cfg.train_config(), act_bundle ? act_bundle->model.get() : nullptr);
  auto metadata = model_metadata(cfg, data.vocab, data.ontology);
  metadata["corpus.hash"] = corpus_hash(cfg);
  std::vector<std::string> lines;

  if (resume) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    auto get = [&](const char* k) {
      auto it = ckpt.metadata.find(k);
      return it == ckpt.metadata.end() ? std::string() : it->second;
    };
    if (get("fingerprint") != cfg.fingerprint()) {
      throw ConfigError("cannot resume: checkpoint fingerprint " + get("fingerprint") + " differs from " + cfg.fingerprint());
    }
    if (get("corpus.hash") != metadata["corpus.hash"]) throw DataError("cannot resume: training corpus changed");
    if (get("vocab.words.hash") != metadata["vocab.words.hash"]) throw DataError("cannot resume: vocabulary changed");
    trainer.restore(ckpt);
    split_lines(get("log"), lines);
    info("resuming at epoch " + std::to_string(trainer.next_epoch()));
  }

  auto save = [&] {
    auto meta = metadata;
    meta["log"] = log_text(cfg.fingerprint(), lines);
    save_checkpoint(ckpt_path, trainer.checkpoint(meta));
    if (!cfg.text("log").empty()) write_file_atomic(cfg.text("log"), meta["log"]);
  };
  const auto every = static_cast<std::size_t>(cfg.integer("checkpoint_every"));
  while (!trainer.finished()) {
    const EpochLog l = trainer.run_epoch();
    lines.push_back(format_epoch_log(l));
    std::cout << lines.back() << "\n" << std::flush;
    if (every && trainer.next_epoch() % every == 0 && !trainer.finished()) save();
  }
  save();
  info("checkpoint written to " + ckpt_path);
  return kOk;
}

// ---- eval ----

std::string fixed2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

struct LoadedModels {
  ModelBundle response;
  std::optional<ModelBundle> act;
};

LoadedModels load_models(const std::string& ckpt, const std::string& act_ckpt) {
  LoadedModels m{load_bundle(ckpt), std::nullopt};
  if (!act_ckpt.empty()) {
    m.act = load_bundle(act_ckpt);
    if (m.act->vocab.words.hash() != m.response.vocab.words.hash()) {
      throw DataError("act and response checkpoints use different vocabularies");
    }
    verify_ontology(*m.act, m.response.ontology);
  }
  return m;
}

// The corpus the checkpoint was trained on must rebuild the same vocabulary.
void verify_corpus(const RunConfig& cfg, const ModelBundle& b, const std::string& corpus_path) {
  auto it = b.checkpoint.metadata.find("corpus.hash");
  if (it == b.checkpoint.metadata.end() || it->second != hex_digest(fnv1a(read_file(corpus_path)))) return;
  const Dataset rebuilt = prepare_dataset(Corpus::load(corpus_path), b.ontology, b.config);
  if (rebuilt.vocab.words.hash() != b.vocab.words.hash()) {
    throw DataError("vocabulary hash of " + corpus_path + " does not match the checkpoint");
  }
  (void)cfg;
}

Evaluation evaluate_checkpoint(const RunConfig& cfg, const std::string& ckpt, const std::string& act_ckpt) {
  const LoadedModels m = load_models(ckpt, act_ckpt);
  const Ontology ontology = Ontology::load(need(cfg, "ontology"));
  verify_ontology(m.response, ontology);
  const std::string corpus_path = cfg.text("eval_corpus").empty() ? need(cfg, "corpus") : cfg.text("eval_corpus");
  verify_corpus(cfg, m.response, corpus_path);
  const Dataset data = load_dataset(cfg, "eval_corpus", m.response.vocab);
  const CogenModel<float>& act_model = m.act ? *m.act->model : *m.response.model;
  return evaluate_generation(act_model, *m.response.model, data.corpus.turns(), data.encoded, data.vocab, ontology,
                             cfg.generate_config());
}

int cmd_eval(const Common& c, bool gold, const std::vector<std::string>& rows) {
  const RunConfig cfg = resolve(c);
  if (!rows.empty()) {
    std::vector<ReportRow> table;
    for (const auto& r : rows) {
      const auto eq = r.find('=');
      if (eq == std::string::npos) throw ConfigError("--row expects label=checkpoint[@act_checkpoint]");
      const std::string spec = r.substr(eq + 1);
      const auto at = spec.find('@');
      const std::string ckpt = spec.substr(0, at);
      const std::string act = at == std::string::npos ? "" : spec.substr(at + 1);
      const Evaluation ev = evaluate_checkpoint(cfg, ckpt, act);
      table.push_back({r.substr(0, eq), ev.report, {{"exact_match", fixed2(ev.exact_match)}}});
    }
    write_comparison(cfg, "model comparison", table);
    return kOk;
  }
  Evaluation ev;
  std::map<std::string, std::string> extra;
  std::string fingerprint = cfg.fingerprint();
  if (gold) {
    const Ontology ontology = Ontology::load(need(cfg, "ontology"));
    const std::string path = cfg.text("eval_corpus").empty() ? need(cfg, "corpus") : cfg.text("eval_corpus");
    Corpus corpus = Corpus::load(path);
    corpus.validate(ontology);
    ev = evaluate_gold(corpus.turns(), ontology);
    extra["mode"] = "gold";
  } else {
    ev = evaluate_checkpoint(cfg, need(cfg, "checkpoint"), cfg.text("act_checkpoint"));
    extra["mode"] = cfg.text("act_checkpoint").empty() ? "joint" : "pipeline";
    fingerprint = load_bundle(cfg.text("checkpoint")).config.fingerprint();
    extra["eval_config_fingerprint"] = cfg.fingerprint();
  }
  extra["exact_match"] = fixed2(ev.exact_match);
  const std::string report = format_report(ev.report, fingerprint, extra);
  std::cout << report;
  if (!cfg.text("report").empty()) write_file_atomic(cfg.text("report"), report);
  return kOk;
}

// ---- generate / chat ----

DialogueTurn make_turn(const std::vector<Utterance>& history, const BeliefState& belief,
                       const std::map<std::string, int>& db) {
  DialogueTurn t;
  t.dialogue_id = "input";
  t.turn_index = history.size() / 2;
  t.history = history;
  t.belief = belief;
  t.db = db;
  return t;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
  return out;
}

void print_generation(const GeneratedTurn& g, const Vocabularies& vocab, const Ontology& ontology) {
  std::vector<std::string> acts;
  for (std::size_t i = 1; i < g.act_ids.size() && g.act_ids[i] != kEosId; ++i) acts.push_back(vocab.acts.token(g.act_ids[i]));
  std::cout << "acts: " << join(acts) << "\n";
  std::cout << "act_set: " << join(canonicalize(g.acts, ontology)) << "\n";
  std::cout << "response: " << join(g.response) << "\n";
  if (g.empty_acts) info("act pass produced no acts; the response attends to <sos>/<eos> states only");
}

GeneratedTurn generate(const LoadedModels& m, const RunConfig& cfg, const DialogueTurn& turn, bool trace) {
  const auto& b = m.response;
  const EncodedTurn e = encode_turn(turn, b.vocab, b.ontology, static_cast<std::size_t>(b.config.integer("max_seq_len")));
  const CogenModel<float>& act_model = m.act ? *m.act->model : *b.model;
  return generate_turn(act_model, *b.model, e, b.vocab, b.ontology, cfg.generate_config(), trace);
}

BeliefState parse_belief(const nlohmann::json& j) {
  BeliefState b;
  for (const auto& [domain, slots] : j.items()) {
    for (const auto& [slot, value] : slots.items()) b[domain][slot] = value.get<std::string>();
  }
  return b;
}

int cmd_generate(const Common& c, const std::string& turn_file) {
  const RunConfig cfg = resolve(c);
  const LoadedModels m = load_models(need(cfg, "checkpoint"), cfg.text("act_checkpoint"));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(turn_file));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(turn_file + ": " + e.what());
  }
  std::vector<Utterance> history;
  BeliefState belief;
  std::map<std::string, int> db;
  try {
    for (std::size_t i = 0; i < j.at("history").size(); ++i) {
      history.push_back({i % 2 == 0 ? Speaker::user : Speaker::system, tokenize(j["history"][i].get<std::string>())});
    }
    if (j.contains("belief")) belief = parse_belief(j["belief"]);
    if (j.contains("db")) db = j["db"].get<std::map<std::string, int>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(turn_file + ": " + e.what());
  }
  if (history.empty() || history.size() % 2 == 0) throw DataError(turn_file + ": history must end with a user utterance");
  const bool trace = !cfg.text("trace").empty();
  const GeneratedTurn g = generate(m, cfg, make_turn(history, belief, db), trace);
  print_generation(g, m.response.vocab, m.response.ontology);
  if (trace) write_file_atomic(cfg.text("trace"), format_attention(g.act_attention));
  return kOk;
}

int cmd_chat(const Common& c) {
  const RunConfig cfg = resolve(c);
  const LoadedModels m = load_models(need(cfg, "checkpoint"), cfg.text("act_checkpoint"));
  std::vector<Utterance> history;
  BeliefState belief;
  std::map<std::string, int> db;
  bool trace = false;
  std::cout << "commands: :belief <domain> <slot> <value> | :db <domain> <count> | :trace | :reset | :quit\n";
  std::string line;
  while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
    if (line.empty()) continue;
    if (line[0] == ':') {
      std::istringstream in(line.substr(1));
      std::string cmd;
      in >> cmd;
      if (cmd == "quit") break;
      if (cmd == "reset") {
        history.clear();
        belief.clear();
        db.clear();
      } else if (cmd == "trace") {
        trace = !trace;
        std::cout << "trace " << (trace ? "on" : "off") << "\n";
      } else if (cmd == "belief") {
        std::string d, s, v;
        if (in >> d >> s >> v) belief[d][s] = v;
      } else if (cmd == "db") {
        std::string d;
        int n = 0;
        if (in >> d >> n) db[d] = n;
      } else {
        std::cout << "unknown command\n";
      }
      continue;
    }
    history.push_back({Speaker::user, tokenize(line)});
    const GeneratedTurn g = generate(m, cfg, make_turn(history, belief, db), trace);
    print_generation(g, m.response.vocab, m.response.ontology);
    if (trace) std::cout << format_attention(g.act_attention);
    history.push_back({Speaker::system, g.response});
    std::cout << "history: " << history.size() << " utterances\n";
  }
  return kOk;
}

// ---- gradcheck ----

int cmd_gradcheck(const Common& c, int seeds, bool negative) {
  const RunConfig cfg = resolve(c);
  std::vector<std::uint64_t> s;
  for (int i = 1; i <= seeds; ++i) s.push_back(static_cast<std::uint64_t>(i));
  const auto rows = gradcheck_suite(s, negative);
  std::string out = "# fingerprint=" + cfg.fingerprint() + " seeds=" + std::to_string(seeds) + "\n";
  out += "op\tmax_rel_error\tthreshold\texpected\tresult\n";
  bool ok = true;
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%.3e\t%.0e\t%s\t%s\n", r.name.c_str(), r.max_error, r.threshold,
                  r.expect_failure ? "fail" : "pass", r.passed() ? "ok" : "MISMATCH");
    out += buf;
    ok = ok && r.passed();
  }
  std::cout << out;
  if (!cfg.text("report").empty()) write_file_atomic(cfg.text("report"), out);
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint dialogue-act and response co-generation"};
  app.require_subcommand(1);
  std::string keys_help = "config keys:\n";
  for (const auto& k : RunConfig::schema()) keys_help += "  " + k.name + " (default '" + k.default_value + "'): " + k.help + "\n";
  app.footer(keys_help);

  Common synth_c, train_c, eval_c, gen_c, chat_c, grad_c;

  auto* synth = app.add_subcommand("synth", "write a synthetic corpus and its ontology");
  add_common(synth, synth_c);
  flag(synth, synth_c, "--out", "corpus", "corpus output path");
  flag(synth, synth_c, "--ontology-out", "ontology", "ontology output path");
  flag(synth, synth_c, "--dialogues", "synth_dialogues", "number of dialogues");
  flag(synth, synth_c, "--seed", "synth_seed", "generator seed");

  bool resume = false, sweep = false, ablation = false;
  auto* train = app.add_subcommand("train", "warm-up then joint training; or a loss-mode sweep or ablation");
  add_common(train, train_c);
  flag(train, train_c, "--corpus", "corpus", "training corpus");
  flag(train, train_c, "--eval-corpus", "eval_corpus", "corpus scored by --sweep and --ablation");
  flag(train, train_c, "--ontology", "ontology", "ontology file");
  flag(train, train_c, "--checkpoint", "checkpoint", "checkpoint output");
  flag(train, train_c, "--act-checkpoint", "act_checkpoint", "act model for phase=response");
  flag(train, train_c, "--log", "log", "loss log output");
  flag(train, train_c, "--report", "report", "sweep or ablation report output");
  flag(train, train_c, "--seed", "seed", "seed");
  flag(train, train_c, "--epochs", "epochs", "epochs after warm-up");
  flag(train, train_c, "--loss-mode", "loss_mode", "uncertainty or weighted:<alpha>");
  train->add_flag("--resume", resume, "continue from the checkpoint");
  train->add_flag("--sweep", sweep, "train every loss mode and report scores");
  train->add_flag("--ablation", ablation, "train joint and pipeline models and report scores");

  bool gold = false;
  std::vector<std::string> rows;
  auto* eval = app.add_subcommand("eval", "generate over a corpus and report metrics");
  add_common(eval, eval_c);
  flag(eval, eval_c, "--checkpoint", "checkpoint", "model checkpoint");
  flag(eval, eval_c, "--act-checkpoint", "act_checkpoint", "separate act model (pipeline)");
  flag(eval, eval_c, "--corpus", "eval_corpus", "corpus to score");
  flag(eval, eval_c, "--ontology", "ontology", "ontology file");
  flag(eval, eval_c, "--report", "report", "report output");
  eval->add_flag("--gold", gold, "score the gold responses");
  eval->add_option("--row", rows, "label=checkpoint[@act_checkpoint]; emits a comparison table");

  std::string turn_file;
  auto* gen = app.add_subcommand("generate", "acts and response for one turn");
  add_common(gen, gen_c);
  flag(gen, gen_c, "--checkpoint", "checkpoint", "model checkpoint");
  flag(gen, gen_c, "--act-checkpoint", "act_checkpoint", "separate act model (pipeline)");
  flag(gen, gen_c, "--trace", "trace", "write the act-attention matrix here");
  gen->add_option("--turn", turn_file, "JSON: {history: [user, system, ..., user], belief, db}")
      ->required()
      ->check(CLI::ExistingFile);

  auto* chat = app.add_subcommand("chat", "interactive generation");
  add_common(chat, chat_c);
  flag(chat, chat_c, "--checkpoint", "checkpoint", "model checkpoint");
  flag(chat, chat_c, "--act-checkpoint", "act_checkpoint", "separate act model (pipeline)");

  int seeds = 5;
  bool negative = false;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and the joint loss");
  add_common(grad, grad_c);
  flag(grad, grad_c, "--report", "report", "report output");
  grad->add_option("--seeds", seeds, "seeds per check")->check(CLI::PositiveNumber);
  grad->add_flag("--negative-control", negative, "include a deliberately broken backward rule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*train) return cmd_train(train_c, resume, sweep, ablation);
    if (*eval) return cmd_eval(eval_c, gold, rows);
    if (*gen) return cmd_generate(gen_c, turn_file);
    if (*chat) return cmd_chat(chat_c);
    if (*grad) return cmd_gradcheck(grad_c, seeds, negative);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
