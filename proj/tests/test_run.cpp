#include <filesystem>
#include <string>
#include <unistd.h>

#include "cogen/error.hpp"
#include "cogen/io.hpp"
#include "cogen/run.hpp"
#include "doctest.h"

using namespace cogen;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cogen-test-run-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

Dataset small_dataset(const RunConfig& cfg) {
  const SynthSpec spec = cfg.synth_spec();
  return prepare_dataset(synth_generate(spec), synth_ontology(spec), cfg);
}

RunConfig small_config() {
  return RunConfig::parse("d_model=8\nn_layers=1\nn_heads=2\nepochs=1\nwarmup_epochs=1\nsynth_dialogues=4\n");
}

}  // namespace

TEST_CASE("config defaults, parsing and validation") {
  const RunConfig d;
  CHECK(d.integer("d_model") == 32);
  CHECK(d.text("loss_mode") == "uncertainty");
  CHECK(d.boolean("trigram_block"));

  const auto c = RunConfig::parse("# comment\nd_model = 16\n\nlr=0.01\n");
  CHECK(c.integer("d_model") == 16);
  CHECK(c.real("lr") == doctest::Approx(0.01));

  CHECK_THROWS_AS(RunConfig::parse("nokey=1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("d_model\n"), ConfigError);
  RunConfig r;
  CHECK_THROWS_AS(r.set("d_model", "abc"), ConfigError);
  CHECK_THROWS_AS(r.set("lr", "0"), ConfigError);
  CHECK_THROWS_AS(r.set("act_attention", "static"), ConfigError);
  CHECK_THROWS_AS(r.set("trigram_block", "maybe"), ConfigError);
  CHECK_THROWS_AS(r.assign("no-equals"), ConfigError);
  try {
    RunConfig::parse("seed=1\nbatch_size=-3\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("later layers override earlier ones") {
  const RunConfig file = RunConfig::parse("seed=7\nlr=0.5\n");
  RunConfig cfg = RunConfig::parse("lr=0.25\n", file);
  CHECK(cfg.integer("seed") == 7);
  CHECK(cfg.real("lr") == doctest::Approx(0.25));
  cfg.assign("seed=9");
  CHECK(cfg.integer("seed") == 9);
  CHECK(RunConfig::parse(cfg.serialize()).serialize() == cfg.serialize());
}

TEST_CASE("fingerprint ignores paths and save frequency") {
  RunConfig a, b;
  b.set("checkpoint", "/elsewhere/model.ckpt");
  b.set("corpus", "other.json");
  b.set("checkpoint_every", "5");
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(b.serialize(false).find("other.json") == std::string::npos);
  CHECK(b.serialize().find("other.json") != std::string::npos);
  b.set("seed", "2");
  CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("derived configs follow the keys") {
  RunConfig cfg;
  cfg.set("loss_mode", "weighted:0.3");
  cfg.set("phase", "act");
  cfg.set("act_max_len", "12");
  const TrainConfig t = cfg.train_config();
  CHECK(t.loss.kind == LossKind::weighted);
  CHECK(t.loss.alpha == doctest::Approx(0.3));
  CHECK(t.phase == Phase::act_only);
  CHECK(cfg.generate_config().acts.max_len == 12);
  CHECK_FALSE(cfg.generate_config().acts.trigram_block);
  CHECK(cfg.generate_config().response.trigram_block);
}

TEST_CASE("bundle round trip and tamper detection") {
  const RunConfig cfg = small_config();
  const Dataset data = small_dataset(cfg);
  const TrainedModel trained = train_model(cfg, data);
  CHECK(trained.logs.size() == 2);

  Checkpoint ckpt = capture_checkpoint<float>(trained.model->params(), nullptr);
  ckpt.metadata = model_metadata(cfg, data.vocab, data.ontology);
  const fs::path path = scratch("bundle.ckpt");
  save_checkpoint(path, ckpt);

  const ModelBundle b = load_bundle(path);
  CHECK(b.config.fingerprint() == cfg.fingerprint());
  CHECK(b.vocab.words.hash() == data.vocab.words.hash());
  verify_ontology(b, data.ontology);
  const auto& p = b.model->params().tensors();
  const auto& q = trained.model->params().tensors();
  REQUIRE(p.size() == q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(std::equal(p[i].data().begin(), p[i].data().end(), q[i].data().begin()));
  }

  const Ontology other = Ontology::parse("[domains]\nhotel\n[actions]\ninform\n[slots]\narea\n");
  CHECK_THROWS_AS(verify_ontology(b, other), DataError);

  Checkpoint bad = ckpt;
  bad.metadata["vocab.words"] += "extra\n";
  save_checkpoint(path, bad);
  CHECK_THROWS_AS(load_bundle(path), DataError);
  bad = ckpt;
  bad.metadata["config"] = RunConfig::parse("seed=3\n", cfg).serialize(false);
  save_checkpoint(path, bad);
  CHECK_THROWS_AS(load_bundle(path), DataError);
  bad = ckpt;
  bad.metadata.erase("ontology");
  save_checkpoint(path, bad);
  CHECK_THROWS_AS(load_bundle(path), DataError);
  fs::remove_all(path.parent_path());
}

TEST_CASE("train_model is deterministic") {
  const RunConfig cfg = small_config();
  const Dataset data = small_dataset(cfg);
  const TrainedModel a = train_model(cfg, data);
  const TrainedModel b = train_model(cfg, data);
  REQUIRE(a.logs.size() == b.logs.size());
  for (std::size_t i = 0; i < a.logs.size(); ++i) CHECK(format_epoch_log(a.logs[i]) == format_epoch_log(b.logs[i]));
  CHECK(serialize_checkpoint(capture_checkpoint<float>(a.model->params(), nullptr)) ==
        serialize_checkpoint(capture_checkpoint<float>(b.model->params(), nullptr)));
}

TEST_CASE("gradcheck suite flags the corrupted rule") {
  const auto rows = gradcheck_suite({1}, true);
  REQUIRE(!rows.empty());
  const auto& last = rows.back();
  CHECK(last.name == "corrupted_square");
  CHECK(last.expect_failure);
  CHECK(last.max_error > last.threshold);
  CHECK(last.passed());
}
