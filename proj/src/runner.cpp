#include "runner.hpp"

#include <atomic>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace krls {

namespace {

std::string iso_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  if (!f) throw IoError("failed writing: " + path);
}

void parse_model_section(const json& j, ModelConfig& m) {
  for (const auto& [key, val] : j.items()) {
    if (key == "d_model")
      m.d_model = val.get<int>();
    else if (key == "n_layers")
      m.n_layers = val.get<int>();
    else if (key == "n_heads")
      m.n_heads = val.get<int>();
    else if (key == "d_ff")
      m.d_ff = val.get<int>();
    else if (key == "max_seq_len")
      m.max_seq_len = val.get<int>();
    else if (key == "seed")
      m.seed = val.get<std::uint64_t>();
    else
      throw ConfigError("config: unknown model key '" + key + "'");
  }
}

void parse_train_section(const json& j, RunConfig& cfg) {
  for (const auto& [key, val] : j.items()) {
    if (key == "algorithm")
      cfg.train.algorithm = parse_algorithm(val.get<std::string>());
    else if (key == "epochs")
      cfg.train.epochs = val.get<int>();
    else if (key == "batch_size")
      cfg.train.batch_size = val.get<int>();
    else if (key == "kappa_fraction")
      cfg.train.kappa_fraction = val.get<double>();
    else if (key == "k_samples")
      cfg.train.k_samples = val.get<int>();
    else if (key == "clip_eps")
      cfg.train.clip_eps = val.get<double>();
    else if (key == "kl_weight")
      cfg.train.kl_weight = val.get<double>();
    else if (key == "lr")
      cfg.train.lr = val.get<double>();
    else if (key == "warmup_fraction")
      cfg.train.warmup_fraction = val.get<double>();
    else if (key == "train_fraction")
      cfg.train.train_fraction = val.get<double>();
    else if (key == "seed")
      cfg.train.seed = val.get<std::uint64_t>();
    else if (key == "init_checkpoint")
      cfg.init_checkpoint = val.get<std::string>();
    else if (key == "scorer_checkpoint")
      cfg.scorer_checkpoint = val.get<std::string>();
    else if (key == "scorer_epochs")
      cfg.scorer_epochs = val.get<int>();
    else
      throw ConfigError("config: unknown train key '" + key + "'");
  }
}

void parse_reward_section(const json& j, RewardSpec& r) {
  for (const auto& [key, val] : j.items()) {
    if (key == "variant")
      r.variant = parse_reward_variant(val.get<std::string>());
    else if (key == "mu")
      r.mu = val.get<double>();
    else if (key == "gamma")
      r.gamma = val.get<double>();
    else if (key == "terminal_scale")
      r.terminal_scale = val.get<double>();
    else
      throw ConfigError("config: unknown reward key '" + key + "'");
  }
}

void parse_sample_section(const json& j, SamplingConfig& s) {
  for (const auto& [key, val] : j.items()) {
    if (key == "tau")
      s.tau = val.get<double>();
    else if (key == "top_p")
      s.top_p = val.get<double>();
    else
      throw ConfigError("config: unknown sample key '" + key + "'");
  }
}

void parse_corpus_section(const json& j, RunConfig& cfg) {
  if (j.contains("dir")) {
    if (j.size() != 1)
      throw ConfigError("config: corpus section with 'dir' must not carry other keys");
    cfg.corpus_from_dir = true;
    cfg.corpus_dir = j.at("dir").get<std::string>();
    return;
  }
  cfg.corpus_from_dir = false;
  cfg.corpus_spec = parse_corpus_spec(j.dump());
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("config: ") + ex.what());
  }
  RunConfig cfg;
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "model")
        parse_model_section(val, cfg.model);
      else if (key == "corpus")
        parse_corpus_section(val, cfg);
      else if (key == "train")
        parse_train_section(val, cfg);
      else if (key == "reward")
        parse_reward_section(val, cfg.train.reward);
      else if (key == "sample")
        parse_sample_section(val, cfg.train.sampling);
      else
        throw ConfigError("config: unknown section '" + key + "'");
    }
  } catch (const json::exception& ex) {
    throw ParseError(std::string("config: ") + ex.what());
  }
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) {
  json corpus;
  if (cfg.corpus_from_dir) {
    corpus = {{"dir", cfg.corpus_dir}};
  } else {
    const CorpusSpec& s = cfg.corpus_spec;
    json domains = json::array();
    for (const auto& d : s.domains)
      domains.push_back(
          {{"name", d.name}, {"offer_slot", d.offer_slot}, {"requestables", d.requestables}});
    corpus = {{"n_train", s.n_train},
              {"n_valid", s.n_valid},
              {"n_test", s.n_test},
              {"templates_per_domain", s.templates_per_domain},
              {"filler_vocab_size", s.filler_vocab_size},
              {"seed", s.seed},
              {"domains", domains}};
  }
  json j = {
      {"model",
       {{"d_model", cfg.model.d_model},
        {"n_layers", cfg.model.n_layers},
        {"n_heads", cfg.model.n_heads},
        {"d_ff", cfg.model.d_ff},
        {"max_seq_len", cfg.model.max_seq_len},
        {"seed", cfg.model.seed}}},
      {"corpus", corpus},
      {"train",
       {{"algorithm", algorithm_name(cfg.train.algorithm)},
        {"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"kappa_fraction", cfg.train.kappa_fraction},
        {"k_samples", cfg.train.k_samples},
        {"clip_eps", cfg.train.clip_eps},
        {"kl_weight", cfg.train.kl_weight},
        {"lr", cfg.train.lr},
        {"warmup_fraction", cfg.train.warmup_fraction},
        {"train_fraction", cfg.train.train_fraction},
        {"seed", cfg.train.seed},
        {"init_checkpoint", cfg.init_checkpoint},
        {"scorer_checkpoint", cfg.scorer_checkpoint},
        {"scorer_epochs", cfg.scorer_epochs}}},
      {"reward",
       {{"variant", reward_variant_name(cfg.train.reward.variant)},
        {"mu", cfg.train.reward.mu},
        {"gamma", cfg.train.reward.gamma},
        {"terminal_scale", cfg.train.reward.terminal_scale}}},
      {"sample", {{"tau", cfg.train.sampling.tau}, {"top_p", cfg.train.sampling.top_p}}}};
  return j.dump(2);
}

void apply_overrides(RunConfig& cfg, const TrainOverrides& ov) {
  if (ov.algorithm) cfg.train.algorithm = parse_algorithm(*ov.algorithm);
  if (ov.seed) cfg.train.seed = *ov.seed;
  if (ov.init_checkpoint) cfg.init_checkpoint = *ov.init_checkpoint;
}

void run_gen_corpus(const std::string& spec_path, const std::string& out_dir,
                    std::optional<std::uint64_t> seed) {
  CorpusSpec spec = spec_path.empty() ? CorpusSpec::defaults() : load_corpus_spec(spec_path);
  if (seed) spec.seed = *seed;
  spec.validate();
  Corpus corpus = generate_corpus(spec);
  fs::create_directories(out_dir);
  save_corpus(corpus, out_dir);
}

namespace {

Corpus obtain_corpus(const RunConfig& cfg) {
  if (cfg.corpus_from_dir) {
    if (!fs::exists(cfg.corpus_dir)) throw ConfigError("corpus dir not found: " + cfg.corpus_dir);
    return load_corpus(cfg.corpus_dir);
  }
  return generate_corpus(cfg.corpus_spec);
}

bool algorithm_needs_scorer(const TrainerConfig& t) {
  bool rl = t.algorithm == Algorithm::krls || t.algorithm == Algorithm::krls_pg ||
            t.algorithm == Algorithm::sl_gold;
  bool variant = t.reward.variant == RewardVariant::prob ||
                 t.reward.variant == RewardVariant::static_emb ||
                 t.reward.variant == RewardVariant::bertscore;
  return rl && variant;
}

PolicyModel pretrain_scorer(const RunConfig& cfg, const Corpus& corpus) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = corpus.vocab.size();
  mc.seed = cfg.model.seed + 0x5c07;
  PolicyModel scorer(mc);
  TrainerConfig tc = cfg.train;
  tc.algorithm = Algorithm::sl;
  tc.epochs = cfg.scorer_epochs;
  tc.kl_weight = 0.0;
  tc.seed = cfg.train.seed + 0x5c07;
  krls_train(tc, corpus, scorer, nullptr, nullptr);
  return scorer;
}

}  // namespace

TrainOutput run_train(const RunConfig& cfg, const std::string& out_dir,
                      const TrainHooks* extra_hooks) {
  cfg.train.validate();
  if (!cfg.init_checkpoint.empty() && !fs::exists(cfg.init_checkpoint))
    throw ConfigError("init checkpoint not found: " + cfg.init_checkpoint);
  if (!cfg.scorer_checkpoint.empty() && !fs::exists(cfg.scorer_checkpoint))
    throw ConfigError("scorer checkpoint not found: " + cfg.scorer_checkpoint);

  Corpus corpus = obtain_corpus(cfg);
  fs::create_directories(out_dir);

  json manifest = {{"command", "train"},
                   {"config", json::parse(run_config_json(cfg))},
                   {"seed", cfg.train.seed},
                   {"corpus_hash", hex(corpus.vocab.hash)},
                   {"checkpoint_paths", json::array()},
                   {"output_dir", out_dir},
                   {"started_at", iso_now()},
                   {"status", "running"}};
  std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  write_text(manifest_path, manifest.dump(2));
  write_text((fs::path(out_dir) / "config.json").string(), run_config_json(cfg));

  ModelConfig mc = cfg.model;
  mc.vocab_size = corpus.vocab.size();
  std::optional<PolicyModel> model;
  if (!cfg.init_checkpoint.empty())
    model.emplace(load_checkpoint(cfg.init_checkpoint, corpus.vocab.hash));
  else
    model.emplace(mc);

  std::optional<PolicyModel> scorer;
  if (algorithm_needs_scorer(cfg.train)) {
    if (!cfg.scorer_checkpoint.empty())
      scorer.emplace(load_checkpoint(cfg.scorer_checkpoint, corpus.vocab.hash));
    else if (!cfg.init_checkpoint.empty())
      scorer.emplace(load_checkpoint(cfg.init_checkpoint, corpus.vocab.hash));
    else
      scorer.emplace(pretrain_scorer(cfg, corpus));
  }

  std::optional<PolicyModel> kl_ref;
  if (cfg.train.kl_weight > 0.0) {
    if (!cfg.init_checkpoint.empty())
      kl_ref.emplace(load_checkpoint(cfg.init_checkpoint, corpus.vocab.hash));
    else
      kl_ref.emplace(mc);  // same init seed: identical parameters
  }

  TrainHooks hooks;
  if (extra_hooks) hooks = *extra_hooks;
  auto outer_epoch_end = hooks.on_epoch_end;
  hooks.on_epoch_end = [&](int epoch) {
    std::string path = (fs::path(out_dir) / ("ckpt_epoch_" + std::to_string(epoch) + ".krls")).string();
    save_checkpoint(*model, path, corpus.vocab.hash);
    manifest["checkpoint_paths"].push_back(path);
    if (outer_epoch_end) outer_epoch_end(epoch);
  };

  TrainOutput out = krls_train(cfg.train, corpus, *model, scorer ? &*scorer : nullptr,
                               kl_ref ? &*kl_ref : nullptr, &hooks);
  out.log.write_csv((fs::path(out_dir) / "runlog.csv").string());

  if (out.aborted) {
    manifest["status"] = "failed";
    manifest["error"] = out.abort_message;
    manifest["finished_at"] = iso_now();
    write_text(manifest_path, manifest.dump(2));
    return out;
  }

  std::string final_path = (fs::path(out_dir) / "ckpt_final.krls").string();
  save_checkpoint(*model, final_path, corpus.vocab.hash);
  manifest["checkpoint_paths"].push_back(final_path);
  write_text((fs::path(out_dir) / "eval.json").string(), out.final_eval.to_json());
  manifest["status"] = "ok";
  manifest["finished_at"] = iso_now();
  write_text(manifest_path, manifest.dump(2));
  return out;
}

TrainOutput run_train_from_manifest(const std::string& manifest_path, const std::string& out_dir) {
  std::ifstream f(manifest_path);
  if (!f) throw ConfigError("cannot open manifest: " + manifest_path);
  json m;
  try {
    m = json::parse(f);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("manifest: ") + ex.what());
  }
  if (!m.contains("config")) throw ConfigError("manifest has no embedded config");
  RunConfig cfg = parse_run_config(m.at("config").dump());
  return run_train(cfg, out_dir);
}

namespace {

std::vector<EncodedEpisode> split_of(const Corpus& corpus, const std::string& split) {
  const std::vector<Episode>* eps = nullptr;
  if (split == "train")
    eps = &corpus.train;
  else if (split == "valid")
    eps = &corpus.valid;
  else if (split == "test")
    eps = &corpus.test;
  else
    throw ConfigError("unknown split '" + split + "'");
  return encode_episodes(*eps, corpus.vocab);
}

int decode_budget(const Corpus& corpus) {
  int m = 1;
  for (const auto* s : {&corpus.train, &corpus.valid, &corpus.test})
    for (const auto& e : *s) m = std::max(m, static_cast<int>(e.response.size()));
  return m + 4;
}

}  // namespace

EvalReport run_eval(const std::string& checkpoint, const std::string& corpus_dir,
                    const std::string& split, const std::string& out_json) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
  if (!fs::exists(corpus_dir)) throw ConfigError("corpus dir not found: " + corpus_dir);
  Corpus corpus = load_corpus(corpus_dir);
  PolicyModel model = load_checkpoint(checkpoint, corpus.vocab.hash);
  EvalReport rep =
      evaluate(model, split_of(corpus, split), corpus.vocab.specials, decode_budget(corpus));
  if (!out_json.empty()) write_text(out_json, rep.to_json());
  return rep;
}

BenchReport run_bench(const std::string& checkpoint, const std::string& corpus_dir, int episodes,
                      int resp_len, int batch, const std::string& out_csv) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
  if (!fs::exists(corpus_dir)) throw ConfigError("corpus dir not found: " + corpus_dir);
  Corpus corpus = load_corpus(corpus_dir);
  PolicyModel model = load_checkpoint(checkpoint, corpus.vocab.hash);
  std::vector<EncodedEpisode> pool = split_of(corpus, "train");
  if (static_cast<int>(pool.size()) < episodes)
    throw ConfigError("bench: corpus has fewer train episodes than requested");
  pool.resize(static_cast<std::size_t>(episodes));
  SamplingConfig scfg;
  BenchReport rep = bench_generation(model, pool, corpus.vocab.specials, scfg, batch, resp_len);
  if (!out_csv.empty()) write_bench_csv(rep, out_csv);
  return rep;
}

namespace {

std::vector<double> parse_grid_values(const std::string& list, const std::string& axis) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      double v = std::stod(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("sweep grid: bad " + axis + " value '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("sweep grid: empty " + axis + " list");
  return out;
}

std::string trim_num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

int worker_cap() {
  if (const char* env = std::getenv("KRLS_LAB_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError("KRLS_LAB_THREADS must be a positive integer");
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

std::vector<SweepCell> run_sweep(const RunConfig& base, const std::string& grid,
                                 const std::string& out_dir) {
  base.train.validate();
  std::vector<double> kappas = {base.train.kappa_fraction};
  std::vector<double> mus = {base.train.reward.mu};
  std::vector<int> ks = {base.train.k_samples};

  std::stringstream ss(grid);
  std::string assign;
  while (ss >> assign) {
    auto eq = assign.find('=');
    if (eq == std::string::npos)
      throw ConfigError("sweep grid: expected axis=v1,v2,... got '" + assign + "'");
    std::string axis = assign.substr(0, eq), list = assign.substr(eq + 1);
    if (axis == "kappa") {
      kappas = parse_grid_values(list, axis);
    } else if (axis == "mu") {
      mus = parse_grid_values(list, axis);
    } else if (axis == "k") {
      ks.clear();
      for (double v : parse_grid_values(list, axis)) {
        if (v < 1.0 || v != std::floor(v))
          throw ConfigError("sweep grid: k values must be positive integers");
        ks.push_back(static_cast<int>(v));
      }
    } else {
      throw ConfigError("sweep grid: unknown axis '" + axis + "'");
    }
  }

  std::vector<SweepCell> cells;
  for (double kappa : kappas)
    for (double mu : mus)
      for (int k : ks) {
        SweepCell c;
        c.kappa = kappa;
        c.mu = mu;
        c.k = k;
        c.dir = (fs::path(out_dir) /
                 ("cell_kappa" + trim_num(kappa) + "_mu" + trim_num(mu) + "_k" + std::to_string(k)))
                    .string();
        cells.push_back(std::move(c));
      }

  fs::create_directories(out_dir);

  // Generating from a spec is deterministic, so sharing one corpus dir across
  // cells keeps them independent processes-wise while avoiding redundant work.
  std::atomic<std::size_t> next{0};
  int workers = std::min<int>(worker_cap(), static_cast<int>(cells.size()));
  auto work = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      SweepCell& c = cells[i];
      RunConfig cfg = base;
      cfg.train.kappa_fraction = c.kappa;
      cfg.train.reward.mu = c.mu;
      cfg.train.k_samples = c.k;
      try {
        TrainOutput out = run_train(cfg, c.dir);
        if (out.aborted) {
          c.ok = false;
          c.error = out.abort_message;
        } else {
          c.ok = true;
          c.eval = out.final_eval;
        }
      } catch (const Error& e) {
        c.ok = false;
        c.error = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::ostringstream csv;
  csv << "kappa,mu,k,combined,inform,success,bleu,status\n";
  for (const auto& c : cells) {
    csv << c.kappa << "," << c.mu << "," << c.k << ",";
    if (c.ok)
      csv << c.eval.combined << "," << c.eval.inform << "," << c.eval.success << "," << c.eval.bleu
          << ",ok\n";
    else
      csv << ",,,failed\n";
  }
  write_text((fs::path(out_dir) / "summary.csv").string(), csv.str());
  return cells;
}

}  // namespace krls
