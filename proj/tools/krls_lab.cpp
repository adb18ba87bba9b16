#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "krls/krls.h"

namespace {

int report(int status) {
  if (status != KRLS_OK) std::cerr << "error: " << krls_last_error() << "\n";
  return status;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"krls-lab: desk-scale KRLS training laboratory"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic dialog corpus");
  std::string gen_spec, gen_out;
  std::int64_t gen_seed = -1;
  gen->add_option("--spec", gen_spec, "Corpus spec JSON (defaults built in)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Override the spec seed");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string tr_config, tr_algo, tr_out, tr_init, tr_manifest;
  std::int64_t tr_seed = -1;
  train->add_option("--config", tr_config, "Run config JSON");
  train->add_option("--manifest", tr_manifest, "Replay from a run manifest instead of --config");
  train->add_option("--algo", tr_algo, "sl|krls|krls-pg|sl-gold|std-rl");
  train->add_option("--seed", tr_seed, "Training seed override");
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_option("--init-checkpoint", tr_init, "Initial checkpoint");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a kappa/mu/k grid sweep");
  std::string sw_config, sw_out;
  std::vector<std::string> sw_grid;
  sweep->add_option("--config", sw_config, "Base run config JSON")->required();
  sweep->add_option("--grid", sw_grid, "Axes, e.g. kappa=0.1,0.5,1.0 mu=2,5,10 k=3")
      ->required()
      ->expected(-1);
  sweep->add_option("--out", sw_out, "Output directory")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "Time next-word sampling vs autoregressive decoding");
  std::string be_ckpt, be_corpus, be_out;
  int be_episodes = 200, be_len = 64, be_batch = 8;
  bench->add_option("--checkpoint", be_ckpt, "Model checkpoint")->required();
  bench->add_option("--corpus", be_corpus, "Corpus directory")->required();
  bench->add_option("--episodes", be_episodes, "Episode count");
  bench->add_option("--len", be_len, "Forced response length");
  bench->add_option("--batch", be_batch, "Batch size");
  bench->add_option("--out", be_out, "Timing CSV path");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
  std::string ev_ckpt, ev_corpus, ev_split = "test", ev_out;
  eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  eval->add_option("--corpus", ev_corpus, "Corpus directory")->required();
  eval->add_option("--split", ev_split, "train|valid|test");
  eval->add_option("--out", ev_out, "EvalReport JSON path (default: print to stdout)");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed())
    return report(krls_gen_corpus(gen_spec.empty() ? nullptr : gen_spec.c_str(), gen_out.c_str(),
                                  gen_seed));

  if (train->parsed()) {
    if (!tr_manifest.empty())
      return report(krls_train_manifest(tr_manifest.c_str(), tr_out.c_str()));
    if (tr_config.empty()) {
      std::cerr << "error: train needs --config or --manifest\n";
      return KRLS_ERR_CONFIG;
    }
    return report(krls_train(tr_config.c_str(), tr_algo.empty() ? nullptr : tr_algo.c_str(),
                             tr_seed, tr_out.c_str(), tr_init.empty() ? nullptr : tr_init.c_str()));
  }

  if (sweep->parsed()) {
    std::string grid;
    for (const auto& g : sw_grid) {
      if (!grid.empty()) grid += ' ';
      grid += g;
    }
    return report(krls_sweep(sw_config.c_str(), grid.c_str(), sw_out.c_str()));
  }

  if (bench->parsed()) {
    double ratio = 0.0;
    int status = krls_bench(be_ckpt.c_str(), be_corpus.c_str(), be_episodes, be_len, be_batch,
                            be_out.empty() ? nullptr : be_out.c_str(), &ratio);
    if (status == KRLS_OK) std::cout << "sample/decode wall-time ratio: " << ratio << "\n";
    return report(status);
  }

  if (eval->parsed()) {
    std::string out = ev_out;
    bool temp = out.empty();
    if (temp)
      out = (std::filesystem::temp_directory_path() /
             ("krls_eval_" + std::to_string(::getpid()) + ".json"))
                .string();
    int status = krls_eval(ev_ckpt.c_str(), ev_corpus.c_str(), ev_split.c_str(), out.c_str());
    if (status == KRLS_OK) std::cout << read_file(out);
    if (temp) std::filesystem::remove(out);
    return report(status);
  }

  return KRLS_OK;
}
