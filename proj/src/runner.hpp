#pragma once

#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "generation.hpp"
#include "trainer.hpp"

namespace krls {

// One JSON document with sections model, corpus, train, reward, sample.
// Unknown sections or keys are configuration errors.
struct RunConfig {
  ModelConfig model;       // vocab_size filled in from the corpus
  TrainerConfig train;     // carries reward and sample sections
  bool corpus_from_dir = false;
  std::string corpus_dir;  // when corpus_from_dir
  CorpusSpec corpus_spec = CorpusSpec::defaults();
  std::string init_checkpoint;
  std::string scorer_checkpoint;
  int scorer_epochs = 2;  // internal scorer pretraining when no checkpoint is given
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& cfg);  // resolved echo, reparseable

struct TrainOverrides {
  std::optional<std::string> algorithm;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> init_checkpoint;
};

void apply_overrides(RunConfig& cfg, const TrainOverrides& ov);

// Commands. Artifacts land under the given output paths; inputs are never
// mutated. ConfigError/IoError/ParseError map to exit 2 at the CLI,
// NumericError (and TrainOutput::aborted) to exit 3.

void run_gen_corpus(const std::string& spec_path, const std::string& out_dir,
                    std::optional<std::uint64_t> seed);

// Writes manifest.json, config.json, runlog.csv, per-epoch + final
// checkpoints, eval.json (test split) under out_dir.
TrainOutput run_train(const RunConfig& cfg, const std::string& out_dir,
                      const TrainHooks* extra_hooks = nullptr);

// Replays a run from its manifest (embedded resolved config).
TrainOutput run_train_from_manifest(const std::string& manifest_path, const std::string& out_dir);

EvalReport run_eval(const std::string& checkpoint, const std::string& corpus_dir,
                    const std::string& split, const std::string& out_json);

BenchReport run_bench(const std::string& checkpoint, const std::string& corpus_dir, int episodes,
                      int resp_len, int batch, const std::string& out_csv);

struct SweepCell {
  double kappa = 0.0, mu = 0.0;
  int k = 0;
  bool ok = false;
  EvalReport eval;
  std::string dir;
  std::string error;
};

// Grid string: space-separated assignments, e.g.
// "kappa=0.1,0.5,1.0 mu=2,5,10 k=3". Omitted axes use the base config value.
// Cells run in up to KRLS_LAB_THREADS workers; failures are recorded and the
// sweep continues. Writes summary.csv under out_dir.
std::vector<SweepCell> run_sweep(const RunConfig& base, const std::string& grid,
                                 const std::string& out_dir);

int worker_cap();  // KRLS_LAB_THREADS, default physical cores

}  // namespace krls
