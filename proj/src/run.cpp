#include "cogen/run.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "cogen/error.hpp"
#include "cogen/gradcheck.hpp"
#include "cogen/io.hpp"

namespace cogen {

const std::vector<RunConfig::Key>& RunConfig::schema() {
  using K = Kind;
  static const std::vector<Key> keys = {
      {"d_model", K::integer, "32", "model width", {}},
      {"n_layers", K::integer, "2", "layers per stack", {}},
      {"n_heads", K::integer, "2", "attention heads", {}},
      {"d_ff", K::integer, "0", "feed-forward width (0 = 4 * d_model)", {}},
      {"max_seq_len", K::integer, "512", "encoder context; older tokens are dropped", {}},
      {"act_attention", K::choice, "dynamic", "response reads act states by attention or their mean", {"dynamic", "mean"}},
      {"phase", K::choice, "joint", "joint, act (act branch only) or response (needs act_checkpoint)",
       {"joint", "act", "response"}},
      {"loss_mode", K::text, "uncertainty", "uncertainty or weighted:<alpha>", {}},
      {"lr", K::real, "0.001", "Adam learning rate", {}},
      {"batch_size", K::integer, "32", "turns per batch", {}},
      {"epochs", K::integer, "300", "epochs after warm-up", {}},
      {"warmup_epochs", K::integer, "10", "act-only epochs before joint training", {}},
      {"stop_loss", K::real, "0", "stop once epoch mean losses fall below this (0 = off)", {}},
      {"seed", K::integer, "1", "initialisation and shuffling seed", {}},
      {"min_freq", K::integer, "1", "vocabulary frequency threshold", {}},
      {"checkpoint_every", K::integer, "0", "also checkpoint every N epochs (0 = end only)", {}},
      {"beam_size", K::integer, "2", "beam width", {}},
      {"trigram_block", K::boolean, "true", "block repeated response trigrams", {}},
      {"length_norm", K::boolean, "false", "rank finished beams by per-token score", {}},
      {"act_max_len", K::integer, "30", "act tokens generated at most", {}},
      {"response_max_len", K::integer, "80", "response tokens generated at most", {}},
      {"sweep_seeds", K::integer, "1", "seeds per loss mode in a sweep", {}},
      {"synth_dialogues", K::integer, "200", "synthetic corpus size", {}},
      {"synth_seed", K::integer, "1", "synthetic corpus seed", {}},
      {"synth_multi_domain_rate", K::real, "0.2", "share of two-domain synthetic goals", {}},
      {"corpus", K::path, "", "training corpus (JSON)", {}},
      {"eval_corpus", K::path, "", "evaluation corpus (defaults to corpus)", {}},
      {"ontology", K::path, "", "ontology file", {}},
      {"checkpoint", K::path, "", "model checkpoint", {}},
      {"act_checkpoint", K::path, "", "act model for pipeline training and evaluation", {}},
      {"report", K::path, "", "report output", {}},
      {"log", K::path, "", "loss log output", {}},
      {"trace", K::path, "", "attention trace output", {}},
  };
  return keys;
}

namespace {

const RunConfig::Key& find_key(const std::string& name) {
  for (const auto& k : RunConfig::schema()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

long long parse_integer(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

double parse_real(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno || !std::isfinite(x)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return x;
}

bool parse_boolean(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : schema()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const Key& k = find_key(key);
  const std::string value = trim(raw);
  switch (k.kind) {
    case Kind::integer: {
      const long long x = parse_integer(key, value);
      const bool may_be_zero = key == "d_ff" || key == "epochs" || key == "warmup_epochs" || key == "seed" ||
                               key == "synth_seed" || key == "checkpoint_every" || key == "synth_dialogues";
      if (x < 0 || (x == 0 && !may_be_zero)) throw ConfigError(key + ": must be positive, got " + value);
      break;
    }
    case Kind::real: {
      const double x = parse_real(key, value);
      if (key == "lr" && !(x > 0)) throw ConfigError("lr: must be positive");
      if (key == "stop_loss" && x < 0) throw ConfigError("stop_loss: must not be negative");
      if (key == "synth_multi_domain_rate" && !(x >= 0 && x <= 1)) {
        throw ConfigError("synth_multi_domain_rate: must lie in [0, 1]");
      }
      break;
    }
    case Kind::boolean:
      parse_boolean(key, value);
      break;
    case Kind::choice:
      if (std::find(k.choices.begin(), k.choices.end(), value) == k.choices.end()) {
        std::string all;
        for (const auto& c : k.choices) all += (all.empty() ? "" : ", ") + c;
        throw ConfigError(key + ": expected one of " + all + ", got '" + value + "'");
      }
      break;
    case Kind::text:
      if (key == "loss_mode") LossMode::parse(value);
      break;
    case Kind::path:
      break;
  }
  values_[key] = value;
}

void RunConfig::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(std::string_view(assignment).substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig RunConfig::parse(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      base.assign(t);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig RunConfig::load(const std::filesystem::path& path, RunConfig base) {
  return parse(read_file(path), std::move(base));
}

const std::string& RunConfig::text(const std::string& key) const {
  find_key(key);
  return values_.at(key);
}

long long RunConfig::integer(const std::string& key) const { return parse_integer(key, text(key)); }
double RunConfig::real(const std::string& key) const { return parse_real(key, text(key)); }
bool RunConfig::boolean(const std::string& key) const { return parse_boolean(key, text(key)); }

std::string RunConfig::serialize(bool with_paths) const {
  std::string out;
  for (const auto& k : schema()) {
    if (with_paths || k.kind != Kind::path) out += k.name + "=" + values_.at(k.name) + "\n";
  }
  return out;
}

std::string RunConfig::fingerprint() const {
  std::string out;
  for (const auto& k : schema()) {
    if (k.kind != Kind::path && k.name != "checkpoint_every") out += k.name + "=" + values_.at(k.name) + "\n";
  }
  return hex_digest(fnv1a(out));
}

TransformerConfig RunConfig::transformer() const {
  TransformerConfig t;
  t.d_model = static_cast<std::size_t>(integer("d_model"));
  t.n_layers = static_cast<std::size_t>(integer("n_layers"));
  t.n_heads = static_cast<std::size_t>(integer("n_heads"));
  t.d_ff = static_cast<std::size_t>(integer("d_ff"));
  t.max_seq_len = static_cast<std::size_t>(integer("max_seq_len"));
  t.validate();
  return t;
}

ModelConfig RunConfig::model_config(const Vocabularies& vocab, const Ontology& ontology) const {
  ModelConfig m;
  m.transformer = transformer();
  m.word_vocab = vocab.words.size();
  m.act_vocab = vocab.acts.size();
  m.belief_size = belief_size(ontology);
  m.act_attention = text("act_attention") == "mean" ? ActAttention::mean : ActAttention::dynamic;
  m.validate();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = static_cast<std::size_t>(integer("epochs"));
  t.warmup_epochs = static_cast<std::size_t>(integer("warmup_epochs"));
  t.batch_size = static_cast<std::size_t>(integer("batch_size"));
  t.lr = real("lr");
  t.seed = static_cast<std::uint64_t>(integer("seed"));
  t.loss = LossMode::parse(text("loss_mode"));
  const auto& p = text("phase");
  t.phase = p == "act" ? Phase::act_only : p == "response" ? Phase::response_only : Phase::joint;
  t.stop_loss = real("stop_loss");
  return t;
}

GenerateConfig RunConfig::generate_config() const {
  GenerateConfig g;
  g.acts.beam_size = g.response.beam_size = static_cast<std::size_t>(integer("beam_size"));
  g.acts.length_norm = g.response.length_norm = boolean("length_norm");
  g.acts.max_len = static_cast<std::size_t>(integer("act_max_len"));
  g.response.max_len = static_cast<std::size_t>(integer("response_max_len"));
  g.acts.trigram_block = false;
  g.response.trigram_block = boolean("trigram_block");
  return g;
}

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s;
  s.dialogues = static_cast<std::size_t>(integer("synth_dialogues"));
  s.seed = static_cast<std::uint64_t>(integer("synth_seed"));
  s.multi_domain_rate = real("synth_multi_domain_rate");
  return s;
}

Dataset prepare_dataset(Corpus corpus, Ontology ontology, const RunConfig& cfg,
                        const std::optional<Vocabularies>& vocab) {
  corpus.validate(ontology);
  Dataset d;
  d.vocab = vocab ? *vocab : build_vocab(corpus.turns(), ontology, static_cast<std::size_t>(cfg.integer("min_freq")));
  const auto max_len = static_cast<std::size_t>(cfg.integer("max_seq_len"));
  for (const auto& t : corpus.turns()) {
    d.encoded.push_back(encode_turn(t, d.vocab, ontology, max_len));
    d.truncated_turns += d.encoded.back().truncated > 0;
  }
  d.corpus = std::move(corpus);
  d.ontology = std::move(ontology);
  return d;
}

std::string ontology_hash(const Ontology& ontology) { return hex_digest(fnv1a(ontology.serialize())); }

std::map<std::string, std::string> model_metadata(const RunConfig& cfg, const Vocabularies& vocab,
                                                  const Ontology& ontology) {
  return {
      {"format", "cogen-model"},
      {"config", cfg.serialize(false)},
      {"fingerprint", cfg.fingerprint()},
      {"vocab.words", vocab.words.serialize()},
      {"vocab.words.hash", hex_digest(vocab.words.hash())},
      {"vocab.acts", vocab.acts.serialize()},
      {"vocab.acts.hash", hex_digest(vocab.acts.hash())},
      {"ontology", ontology.serialize()},
      {"ontology.hash", ontology_hash(ontology)},
  };
}

namespace {

const std::string& meta(const Checkpoint& c, const std::string& key, const std::filesystem::path& path) {
  auto it = c.metadata.find(key);
  if (it == c.metadata.end()) throw DataError(path.string() + ": checkpoint lacks '" + key + "'");
  return it->second;
}

}  // namespace

ModelBundle load_bundle(const std::filesystem::path& path) {
  ModelBundle b;
  b.checkpoint = load_checkpoint(path);
  const auto& c = b.checkpoint;
  if (meta(c, "format", path) != "cogen-model") throw DataError(path.string() + ": not a model checkpoint");
  b.config = RunConfig::parse(meta(c, "config", path));
  b.vocab.words = Vocab::parse(meta(c, "vocab.words", path));
  b.vocab.acts = Vocab::parse(meta(c, "vocab.acts", path));
  b.ontology = Ontology::parse(meta(c, "ontology", path));
  auto check = [&](const std::string& key, const std::string& actual) {
    if (meta(c, key, path) != actual) {
      throw DataError(path.string() + ": " + key + " mismatch (stored " + meta(c, key, path) + ", computed " +
                      actual + ")");
    }
  };
  check("vocab.words.hash", hex_digest(b.vocab.words.hash()));
  check("vocab.acts.hash", hex_digest(b.vocab.acts.hash()));
  check("ontology.hash", ontology_hash(b.ontology));
  check("fingerprint", b.config.fingerprint());
  if (b.vocab.acts.hash() != act_vocab(b.ontology).hash()) {
    throw DataError(path.string() + ": act vocabulary does not match the stored ontology");
  }
  b.model = std::make_unique<CogenModel<float>>(b.config.model_config(b.vocab, b.ontology), 0);
  restore_checkpoint<float>(c, b.model->params(), nullptr);
  return b;
}

void verify_ontology(const ModelBundle& bundle, const Ontology& ontology) {
  if (ontology_hash(bundle.ontology) != ontology_hash(ontology)) {
    throw DataError("checkpoint ontology hash " + ontology_hash(bundle.ontology) + " does not match " +
                    ontology_hash(ontology));
  }
}

TrainedModel train_model(const RunConfig& cfg, const Dataset& data, const CogenModel<float>* act_source,
                         const std::function<void(const EpochLog&)>& on_epoch) {
  TrainedModel out;
  out.model = std::make_unique<CogenModel<float>>(cfg.model_config(data.vocab, data.ontology),
                                                  static_cast<std::uint64_t>(cfg.integer("seed")));
  Trainer trainer(*out.model, data.encoded, cfg.train_config(), act_source);
  trainer.run([&](const EpochLog& l) {
    out.logs.push_back(l);
    if (on_epoch) on_epoch(l);
  });
  return out;
}

namespace {

ReportRow evaluated_row(const std::string& label, const CogenModel<float>& act_model,
                        const CogenModel<float>& response_model, const RunConfig& cfg, const Dataset& eval,
                        std::map<std::string, std::string> notes) {
  const auto ev = evaluate_generation(act_model, response_model, eval.corpus.turns(), eval.encoded, eval.vocab,
                                      eval.ontology, cfg.generate_config());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", ev.exact_match);
  notes["exact_match"] = buf;
  return {label, ev.report, std::move(notes)};
}

std::string format_loss(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

}  // namespace

std::vector<ReportRow> run_ablation(const RunConfig& cfg, const Dataset& train, const Dataset& eval,
                                    const std::function<void(const std::string&)>& progress) {
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  std::vector<ReportRow> rows;

  RunConfig joint = cfg;
  joint.set("phase", "joint");
  joint.set("act_attention", "dynamic");
  say("training joint model");
  const auto j = train_model(joint, train);
  rows.push_back(evaluated_row("joint", *j.model, *j.model, joint, eval,
                               {{"epochs", std::to_string(j.logs.size())},
                                {"final_response_loss", format_loss(j.logs.back().response_loss)}}));

  // The act model gets the joint model's full act budget: warm-up plus joint epochs.
  RunConfig act = cfg;
  act.set("phase", "act");
  act.set("epochs", std::to_string(cfg.integer("warmup_epochs") + cfg.integer("epochs")));
  say("training act model");
  const auto a = train_model(act, train);

  for (const std::string mode : {"dynamic", "mean"}) {
    RunConfig resp = cfg;
    resp.set("phase", "response");
    resp.set("act_attention", mode);
    say("training pipeline response model (" + mode + ")");
    const auto r = train_model(resp, train, a.model.get());
    rows.push_back(evaluated_row("pipeline-" + mode, *a.model, *r.model, resp, eval,
                                 {{"epochs", std::to_string(r.logs.size())},
                                  {"final_response_loss", format_loss(r.logs.back().response_loss)}}));
  }
  return rows;
}

std::vector<LossMode> sweep_modes() {
  std::vector<LossMode> modes;
  for (int i = 0; i <= 10; ++i) modes.push_back({LossKind::weighted, i / 10.0});
  modes.push_back({LossKind::uncertainty, 0.5});
  return modes;
}

SweepResult run_sweep(const RunConfig& cfg, const Dataset& train, const Dataset& eval,
                      const std::vector<std::uint64_t>& seeds,
                      const std::function<void(const std::string&)>& progress) {
  SweepResult out;
  for (std::uint64_t seed : seeds) {
    std::vector<double> combined;
    for (const auto& mode : sweep_modes()) {
      RunConfig run = cfg;
      run.set("phase", "joint");
      run.set("seed", std::to_string(seed));
      run.set("loss_mode", mode.str());
      if (progress) progress("seed " + std::to_string(seed) + " " + mode.str());
      const auto m = train_model(run, train);
      auto row = evaluated_row(mode.str(), *m.model, *m.model, run, eval, {{"seed", std::to_string(seed)}});
      if (mode.kind == LossKind::uncertainty) {
        row.notes["sigma1_sq"] = format_loss(m.logs.back().sigma1_sq);
        row.notes["sigma2_sq"] = format_loss(m.logs.back().sigma2_sq);
      }
      combined.push_back(row.metrics.combined);
      out.rows.push_back(std::move(row));
    }
    // Rank 1 + number of modes strictly better than uncertainty.
    const double u = combined.back();
    std::size_t rank = 1;
    for (std::size_t i = 0; i + 1 < combined.size(); ++i) rank += combined[i] > u;
    out.uncertainty_rank.push_back(rank);
    for (std::size_t i = out.rows.size() - combined.size(); i < out.rows.size(); ++i) {
      if (out.rows[i].label == "uncertainty") out.rows[i].notes["rank"] = std::to_string(rank);
    }
  }
  return out;
}

namespace {

double stack_gradcheck(std::uint64_t seed) {
  TransformerConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.max_seq_len = 16;
  Rng rng(seed);
  ParameterSet<double> p;
  std::vector<double> table_values(12 * 8), proj_values(16 * 12);
  for (auto& x : table_values) x = rng.normal();
  for (auto& x : proj_values) x = rng.normal();
  const auto table = p.add("embed", Tensor<double>::from({12, 8}, table_values));
  Encoder<double> enc(p, "encoder", cfg, rng);
  Decoder<double> dec(p, "decoder", cfg, rng);
  const auto proj = p.add("proj", Tensor<double>::from({16, 12}, proj_values));
  const std::vector<int> src{3, 8, 9, 5, 11};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 1};
  const std::vector<int> tgt{1, 6, 7, 4};
  const std::vector<int> next{6, 7, 4, 2};
  auto loss = [&] {
    const auto e = enc.encode(table, src, mask);
    const auto o = dec.forward(embed_tokens(table, tgt), e);
    return cross_entropy(output_projection(concat_cols(std::vector<Tensor<double>>{o.h, o.c}), proj), next, -1);
  };
  return gradcheck_parameters(loss, p.tensors());
}

double joint_gradcheck(std::uint64_t seed, const LossMode& mode) {
  SynthSpec spec;
  spec.dialogues = 2;
  spec.seed = seed;
  const Ontology ontology = synth_ontology(spec);
  const Corpus corpus = synth_generate(spec);
  const Vocabularies vocab = build_vocab(corpus.turns(), ontology, 1);
  std::vector<EncodedTurn> turns;
  for (std::size_t i = 0; i < 2 && i < corpus.turns().size(); ++i) {
    turns.push_back(encode_turn(corpus.turns()[i], vocab, ontology, 64));
  }
  ModelConfig cfg;
  cfg.transformer.n_layers = 1;
  cfg.transformer.n_heads = 2;
  cfg.transformer.d_model = 8;
  cfg.transformer.d_ff = 12;
  cfg.word_vocab = vocab.words.size();
  cfg.act_vocab = vocab.acts.size();
  cfg.belief_size = belief_size(ontology);
  CogenModel<double> model(cfg, seed);
  Rng rng(mix_seed(seed, 17));
  model.params().get("uncertainty.s1").node()->data[0] = rng.uniform(-0.5, 0.5);
  model.params().get("uncertainty.s2").node()->data[0] = rng.uniform(-0.5, 0.5);
  const Batch batch = batchify(turns, turns.size(), seed).front();
  auto loss = [&] { return combine_losses(model, batch_losses(model, batch, Phase::joint), mode, Phase::joint); };
  return gradcheck_parameters(loss, model.params().tensors());
}

}  // namespace

std::vector<GradcheckRow> gradcheck_suite(const std::vector<std::uint64_t>& seeds, bool negative_control) {
  std::vector<GradcheckRow> rows;
  auto worst = [&](const std::function<double(std::uint64_t)>& f) {
    double m = 0;
    for (auto s : seeds) m = std::max(m, f(s));
    return m;
  };
  for (const auto& c : primitive_gradcheck_cases()) {
    rows.push_back({c.name, worst([&](std::uint64_t s) { return gradcheck(c.fn, c.shapes, s); }), c.threshold, false});
  }
  rows.push_back({"encoder_decoder_stack", worst(stack_gradcheck), 1e-4, false});
  for (const auto& mode : {LossMode{LossKind::uncertainty, 0.5}, LossMode{LossKind::weighted, 0.3}}) {
    rows.push_back({"joint_loss[" + mode.str() + "]",
                    worst([&](std::uint64_t s) { return joint_gradcheck(s, mode); }), 1e-3, false});
  }
  if (negative_control) {
    const auto c = corrupted_backward_case();
    rows.push_back({c.name, worst([&](std::uint64_t s) { return gradcheck(c.fn, c.shapes, s); }), c.threshold, true});
  }
  return rows;
}

}  // namespace cogen
