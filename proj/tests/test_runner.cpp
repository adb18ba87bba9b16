#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "runner.hpp"

using namespace krls;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("krls_runner_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Tiny end-to-end run configuration: inline corpus, 8-dim model, one SL epoch.
std::string tiny_config_json(const std::string& algorithm = "sl") {
  return std::string(R"({
    "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16, "max_seq_len": 128, "seed": 5},
    "corpus": {"n_train": 12, "n_valid": 4, "n_test": 4, "seed": 2},
    "train": {"algorithm": ")") +
         algorithm + R"(", "epochs": 1, "seed": 11, "scorer_epochs": 1}
  })";
}

struct EnvGuard {
  std::string name, old_value;
  bool had = false;
  explicit EnvGuard(const std::string& n) : name(n) {
    if (const char* v = std::getenv(n.c_str())) {
      had = true;
      old_value = v;
    }
  }
  ~EnvGuard() {
    if (had)
      setenv(name.c_str(), old_value.c_str(), 1);
    else
      unsetenv(name.c_str());
  }
};

}  // namespace

TEST_CASE("config parsing: unknown sections and keys are errors") {
  CHECK_THROWS_AS(parse_run_config(R"({"modell": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"dmodel": 8}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"algo": "sl"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"reward": {"nu": 5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"sample": {"temp": 1.0}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"corpus": {"dir": "x", "n_train": 5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{"), ParseError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"epochs": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"epochs": "three"}})"), ParseError);
}

TEST_CASE("config parsing: values land in the right places") {
  RunConfig cfg = parse_run_config(tiny_config_json("krls-pg"));
  CHECK(cfg.model.d_model == 8);
  CHECK(cfg.model.seed == 5);
  CHECK(cfg.train.algorithm == Algorithm::krls_pg);
  CHECK(cfg.train.epochs == 1);
  CHECK(cfg.train.seed == 11);
  CHECK(cfg.scorer_epochs == 1);
  CHECK_FALSE(cfg.corpus_from_dir);
  CHECK(cfg.corpus_spec.n_train == 12);

  RunConfig from_dir = parse_run_config(R"({"corpus": {"dir": "/some/where"}})");
  CHECK(from_dir.corpus_from_dir);
  CHECK(from_dir.corpus_dir == "/some/where");

  RunConfig knobs = parse_run_config(
      R"({"reward": {"variant": "zero", "mu": 2.0, "gamma": 0.5, "terminal_scale": 1.0},
          "sample": {"tau": 1.3, "top_p": 0.8}})");
  CHECK(knobs.train.reward.variant == RewardVariant::zero);
  CHECK(knobs.train.reward.mu == 2.0);
  CHECK(knobs.train.reward.gamma == 0.5);
  CHECK(knobs.train.sampling.tau == 1.3);
  CHECK(knobs.train.sampling.top_p == 0.8);
}

TEST_CASE("resolved config echo is reparseable and stable") {
  RunConfig a = parse_run_config(tiny_config_json());
  std::string ser = run_config_json(a);
  RunConfig b = parse_run_config(ser);
  CHECK(run_config_json(b) == ser);

  RunConfig d = parse_run_config(R"({"corpus": {"dir": "/data/corpus"}})");
  RunConfig d2 = parse_run_config(run_config_json(d));
  CHECK(d2.corpus_from_dir);
  CHECK(d2.corpus_dir == "/data/corpus");
}

TEST_CASE("train overrides") {
  RunConfig cfg = parse_run_config(tiny_config_json());
  TrainOverrides ov;
  ov.algorithm = "krls";
  ov.seed = 99;
  ov.init_checkpoint = "/ck.krls";
  apply_overrides(cfg, ov);
  CHECK(cfg.train.algorithm == Algorithm::krls);
  CHECK(cfg.train.seed == 99);
  CHECK(cfg.init_checkpoint == "/ck.krls");
  ov.algorithm = "nope";
  CHECK_THROWS_AS(apply_overrides(cfg, ov), ConfigError);
}

TEST_CASE("worker cap honors KRLS_LAB_THREADS") {
  EnvGuard guard("KRLS_LAB_THREADS");
  setenv("KRLS_LAB_THREADS", "3", 1);
  CHECK(worker_cap() == 3);
  setenv("KRLS_LAB_THREADS", "0", 1);
  CHECK_THROWS_AS(worker_cap(), ConfigError);
  setenv("KRLS_LAB_THREADS", "many", 1);
  CHECK_THROWS_AS(worker_cap(), ConfigError);
  unsetenv("KRLS_LAB_THREADS");
  CHECK(worker_cap() >= 1);
}

TEST_CASE("gen-corpus command writes a loadable corpus and honors the seed") {
  TempDir dir;
  std::ofstream(dir.file("spec.json")) << R"({"n_train": 10, "n_valid": 3, "n_test": 3})";
  run_gen_corpus(dir.file("spec.json"), dir.file("c1"), std::nullopt);
  run_gen_corpus(dir.file("spec.json"), dir.file("c2"), 7);
  Corpus c1 = load_corpus(dir.file("c1"));
  Corpus c2 = load_corpus(dir.file("c2"));
  CHECK(c1.train.size() == 10);
  CHECK(c2.train.size() == 10);
  CHECK(slurp(dir.file("c1") + "/train.jsonl") != slurp(dir.file("c2") + "/train.jsonl"));
  CHECK_THROWS_AS(run_gen_corpus(dir.file("missing.json"), dir.file("c3"), std::nullopt),
                  Error);
}

TEST_CASE("train command: artifacts, manifest, and replay") {
  TempDir dir;
  RunConfig cfg = parse_run_config(tiny_config_json());
  TrainOutput out = run_train(cfg, dir.file("run"));
  REQUIRE_FALSE(out.aborted);

  for (const char* f : {"manifest.json", "config.json", "runlog.csv", "ckpt_epoch_0.krls",
                        "ckpt_final.krls", "eval.json"})
    CHECK(fs::exists(fs::path(dir.file("run")) / f));

  std::string manifest = slurp(dir.file("run") + "/manifest.json");
  CHECK(manifest.find("\"status\": \"ok\"") != std::string::npos);
  CHECK(manifest.find("\"corpus_hash\"") != std::string::npos);
  CHECK(manifest.find("\"command\": \"train\"") != std::string::npos);
  std::string runlog = slurp(dir.file("run") + "/runlog.csv");
  CHECK(runlog.rfind("step,epoch,phase,", 0) == 0);
  CHECK(runlog.find(",wall_ms") != std::string::npos);

  // Replay from the manifest: same metrics, bit-identical final checkpoint.
  TrainOutput replay = run_train_from_manifest(dir.file("run") + "/manifest.json",
                                               dir.file("replay"));
  REQUIRE_FALSE(replay.aborted);
  CHECK(replay.log.metric_columns() == out.log.metric_columns());
  CHECK(slurp(dir.file("replay") + "/ckpt_final.krls") ==
        slurp(dir.file("run") + "/ckpt_final.krls"));

  CHECK_THROWS_AS(run_train_from_manifest(dir.file("nope.json"), dir.file("x")), ConfigError);

  // Missing referenced checkpoints are configuration errors.
  RunConfig bad = cfg;
  bad.init_checkpoint = dir.file("absent.krls");
  CHECK_THROWS_AS(run_train(bad, dir.file("y")), ConfigError);
}

TEST_CASE("eval command reads a checkpoint against its corpus") {
  TempDir dir;
  std::ofstream(dir.file("spec.json")) << R"({"n_train": 12, "n_valid": 4, "n_test": 4})";
  run_gen_corpus(dir.file("spec.json"), dir.file("corpus"), std::nullopt);
  Corpus corpus = load_corpus(dir.file("corpus"));
  ModelConfig mc = helpers::tiny_model_config(corpus.vocab.size(), 5);
  mc.max_seq_len = 128;
  PolicyModel model(mc);
  save_checkpoint(model, dir.file("m.krls"), corpus.vocab.hash);

  EvalReport rep = run_eval(dir.file("m.krls"), dir.file("corpus"), "test", dir.file("eval.json"));
  CHECK(rep.episode_count == 4);
  CHECK(slurp(dir.file("eval.json")).find("\"combined\"") != std::string::npos);
  CHECK_THROWS_AS(run_eval(dir.file("absent.krls"), dir.file("corpus"), "test", ""), ConfigError);
  CHECK_THROWS_AS(run_eval(dir.file("m.krls"), dir.file("corpus"), "dev", ""), ConfigError);
}

TEST_CASE("bench command: episode budget and CSV output") {
  TempDir dir;
  std::ofstream(dir.file("spec.json")) << R"({"n_train": 110, "n_valid": 3, "n_test": 3})";
  run_gen_corpus(dir.file("spec.json"), dir.file("corpus"), std::nullopt);
  Corpus corpus = load_corpus(dir.file("corpus"));
  ModelConfig mc = helpers::tiny_model_config(corpus.vocab.size(), 5);
  mc.max_seq_len = 128;
  PolicyModel model(mc);
  save_checkpoint(model, dir.file("m.krls"), corpus.vocab.hash);

  BenchReport rep = run_bench(dir.file("m.krls"), dir.file("corpus"), 100, 8, 8, dir.file("b.csv"));
  CHECK(rep.sample.tokens == 800);
  std::string csv = slurp(dir.file("b.csv"));
  CHECK(csv.rfind("procedure,batch,episodes,tokens,wall_ms\n", 0) == 0);
  CHECK(csv.find("next_word_sample,8,100,800,") != std::string::npos);
  CHECK(csv.find("autoregressive_decode,8,100,800,") != std::string::npos);
  CHECK(csv.find("ratio,,,,") != std::string::npos);
  CHECK_THROWS_AS(run_bench(dir.file("m.krls"), dir.file("corpus"), 500, 8, 8, ""), ConfigError);
}

TEST_CASE("sweep harness: grid parsing and summary") {
  CHECK_THROWS_AS(run_sweep(parse_run_config("{}"), "bogus=1", "/tmp/never"), ConfigError);
  CHECK_THROWS_AS(run_sweep(parse_run_config("{}"), "kappa=", "/tmp/never"), ConfigError);
  CHECK_THROWS_AS(run_sweep(parse_run_config("{}"), "k=0.5", "/tmp/never"), ConfigError);
  CHECK_THROWS_AS(run_sweep(parse_run_config("{}"), "kappa 0.5", "/tmp/never"), ConfigError);

  EnvGuard guard("KRLS_LAB_THREADS");
  setenv("KRLS_LAB_THREADS", "1", 1);
  TempDir dir;
  RunConfig base = parse_run_config(tiny_config_json());
  std::vector<SweepCell> cells = run_sweep(base, "kappa=0.5,1.0 k=1", dir.file("sweep"));
  REQUIRE(cells.size() == 2);
  for (const auto& c : cells) {
    CHECK(c.ok);
    CHECK(c.k == 1);
    CHECK(fs::exists(fs::path(c.dir) / "manifest.json"));
  }
  std::string summary = slurp(dir.file("sweep") + "/summary.csv");
  CHECK(summary.rfind("kappa,mu,k,combined,inform,success,bleu,status\n", 0) == 0);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);
  CHECK(summary.find(",ok\n") != std::string::npos);
  CHECK(summary.find(",failed\n") == std::string::npos);
}
