#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cogen/checkpoint.hpp"
#include "cogen/decoding.hpp"
#include "cogen/evaluation.hpp"
#include "cogen/trainer.hpp"

namespace cogen {

// Flat key=value configuration. Every key is declared in schema(); values are
// validated on assignment.
class RunConfig {
 public:
  enum class Kind { integer, real, boolean, text, choice, path };
  struct Key {
    std::string name;
    Kind kind;
    std::string default_value;
    std::string help;
    std::vector<std::string> choices;  // for Kind::choice
  };
  static const std::vector<Key>& schema();

  RunConfig();
  // Lines of key=value; '#' starts a comment. Throws ConfigError.
  static RunConfig parse(std::string_view text, RunConfig base = {});
  static RunConfig load(const std::filesystem::path& path, RunConfig base = {});

  void set(const std::string& key, const std::string& value);
  // "key=value".
  void assign(const std::string& assignment);

  const std::string& text(const std::string& key) const;
  long long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;

  // Every key in schema order; path keys are left out unless asked for.
  std::string serialize(bool with_paths = true) const;
  // Hash of every key except paths and checkpoint_every; two runs that differ
  // only in file locations or save frequency share a fingerprint.
  std::string fingerprint() const;

  TransformerConfig transformer() const;
  ModelConfig model_config(const Vocabularies& vocab, const Ontology& ontology) const;
  TrainConfig train_config() const;
  GenerateConfig generate_config() const;
  SynthSpec synth_spec() const;

 private:
  std::map<std::string, std::string> values_;
};

struct Dataset {
  Ontology ontology;
  Corpus corpus;
  Vocabularies vocab;
  std::vector<EncodedTurn> encoded;
  std::size_t truncated_turns = 0;
};

// Encodes `corpus` with `vocab`, or with a vocabulary built from it.
Dataset prepare_dataset(Corpus corpus, Ontology ontology, const RunConfig& cfg,
                        const std::optional<Vocabularies>& vocab = std::nullopt);

// A model together with everything needed to rebuild and verify it.
struct ModelBundle {
  RunConfig config;
  Ontology ontology;
  Vocabularies vocab;
  std::unique_ptr<CogenModel<float>> model;
  Checkpoint checkpoint;  // as loaded; carries optimizer state and epoch counter
};

std::string ontology_hash(const Ontology& ontology);

// Metadata describing the model: config, fingerprint, vocabularies, ontology
// and their hashes.
std::map<std::string, std::string> model_metadata(const RunConfig& cfg, const Vocabularies& vocab,
                                                  const Ontology& ontology);

// Throws DataError when a stored hash disagrees with the stored content.
ModelBundle load_bundle(const std::filesystem::path& path);
// Throws DataError when the bundle was trained under a different ontology.
void verify_ontology(const ModelBundle& bundle, const Ontology& ontology);

struct TrainedModel {
  std::unique_ptr<CogenModel<float>> model;
  std::vector<EpochLog> logs;
};

// Trains a fresh model as configured (phase, loss mode, epochs).
TrainedModel train_model(const RunConfig& cfg, const Dataset& data, const CogenModel<float>* act_source = nullptr,
                         const std::function<void(const EpochLog&)>& on_epoch = {});

// Joint model versus pipelines whose response decoder reads a separately
// trained act model, with dynamic attention or the mean of H^a.
std::vector<ReportRow> run_ablation(const RunConfig& cfg, const Dataset& train, const Dataset& eval,
                                    const std::function<void(const std::string&)>& progress = {});

struct SweepResult {
  std::vector<ReportRow> rows;                  // every (mode, seed) pair
  std::vector<std::size_t> uncertainty_rank;    // per seed, 1 = best combined score
};

std::vector<LossMode> sweep_modes();

// Every loss mode of sweep_modes() for each seed.
SweepResult run_sweep(const RunConfig& cfg, const Dataset& train, const Dataset& eval,
                      const std::vector<std::uint64_t>& seeds,
                      const std::function<void(const std::string&)>& progress = {});

struct GradcheckRow {
  std::string name;
  double max_error = 0;  // over all seeds
  double threshold = 0;
  bool expect_failure = false;  // negative control
  bool passed() const { return expect_failure ? !(max_error < threshold) : max_error < threshold; }
};

// Every primitive, the encoder and decoder stacks, and the full joint loss
// (uncertainty and weighted) of a tiny model, each over `seeds`.
std::vector<GradcheckRow> gradcheck_suite(const std::vector<std::uint64_t>& seeds, bool negative_control = false);

}  // namespace cogen
