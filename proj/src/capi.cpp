#include "krls/krls.h"

#include <cstring>
#include <string>

#include "runner.hpp"

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

// ConfigError and file/parse problems are caller mistakes (exit 2); anything
// else is a runtime failure (exit 3).
template <typename F>
int guarded(F&& f) {
  try {
    g_last_error.clear();
    return f();
  } catch (const krls::ConfigError& e) {
    return fail(KRLS_ERR_CONFIG, e.what());
  } catch (const krls::ParseError& e) {
    return fail(KRLS_ERR_CONFIG, e.what());
  } catch (const krls::IoError& e) {
    return fail(KRLS_ERR_CONFIG, e.what());
  } catch (const krls::CheckpointError& e) {
    return fail(KRLS_ERR_CONFIG, e.what());
  } catch (const std::exception& e) {
    return fail(KRLS_ERR_RUNTIME, e.what());
  }
}

std::string opt_str(const char* s) { return s ? std::string(s) : std::string(); }

}  // namespace

extern "C" {

const char* krls_last_error(void) { return g_last_error.c_str(); }

int krls_gen_corpus(const char* spec_path, const char* out_dir, int64_t seed) {
  if (!out_dir) return fail(KRLS_ERR_CONFIG, "out_dir is required");
  return guarded([&] {
    std::optional<std::uint64_t> s;
    if (seed >= 0) s = static_cast<std::uint64_t>(seed);
    krls::run_gen_corpus(opt_str(spec_path), out_dir, s);
    return KRLS_OK;
  });
}

int krls_train(const char* config_path, const char* algo, int64_t seed, const char* out_dir,
               const char* init_checkpoint) {
  if (!config_path || !out_dir) return fail(KRLS_ERR_CONFIG, "config_path and out_dir are required");
  return guarded([&] {
    krls::RunConfig cfg = krls::load_run_config(config_path);
    krls::TrainOverrides ov;
    if (algo) ov.algorithm = std::string(algo);
    if (seed >= 0) ov.seed = static_cast<std::uint64_t>(seed);
    if (init_checkpoint) ov.init_checkpoint = std::string(init_checkpoint);
    krls::apply_overrides(cfg, ov);
    krls::TrainOutput out = krls::run_train(cfg, out_dir);
    if (out.aborted) return fail(KRLS_ERR_RUNTIME, out.abort_message);
    return KRLS_OK;
  });
}

int krls_train_manifest(const char* manifest_path, const char* out_dir) {
  if (!manifest_path || !out_dir)
    return fail(KRLS_ERR_CONFIG, "manifest_path and out_dir are required");
  return guarded([&] {
    krls::TrainOutput out = krls::run_train_from_manifest(manifest_path, out_dir);
    if (out.aborted) return fail(KRLS_ERR_RUNTIME, out.abort_message);
    return KRLS_OK;
  });
}

int krls_eval(const char* checkpoint, const char* corpus_dir, const char* split,
              const char* out_json) {
  if (!checkpoint || !corpus_dir)
    return fail(KRLS_ERR_CONFIG, "checkpoint and corpus_dir are required");
  return guarded([&] {
    krls::run_eval(checkpoint, corpus_dir, split ? split : "test", opt_str(out_json));
    return KRLS_OK;
  });
}

int krls_bench(const char* checkpoint, const char* corpus_dir, int episodes, int resp_len,
               int batch, const char* out_csv, double* ratio_out) {
  if (!checkpoint || !corpus_dir)
    return fail(KRLS_ERR_CONFIG, "checkpoint and corpus_dir are required");
  return guarded([&] {
    krls::BenchReport rep =
        krls::run_bench(checkpoint, corpus_dir, episodes, resp_len, batch, opt_str(out_csv));
    if (ratio_out) *ratio_out = rep.ratio;
    return KRLS_OK;
  });
}

int krls_sweep(const char* config_path, const char* grid, const char* out_dir) {
  if (!config_path || !grid || !out_dir)
    return fail(KRLS_ERR_CONFIG, "config_path, grid, and out_dir are required");
  return guarded([&] {
    krls::RunConfig cfg = krls::load_run_config(config_path);
    krls::run_sweep(cfg, grid, out_dir);
    return KRLS_OK;
  });
}

struct krls_model {
  krls::PolicyModel model;
  krls::SpecialIds specials;
};

int krls_model_load(const char* checkpoint, const char* vocab_json, krls_model** out) {
  if (!checkpoint || !vocab_json || !out)
    return fail(KRLS_ERR_CONFIG, "checkpoint, vocab_json, and out are required");
  return guarded([&] {
    krls::Vocabulary vocab = krls::load_vocabulary(vocab_json);
    *out = new krls_model{krls::load_checkpoint(checkpoint, vocab.hash), vocab.specials};
    return KRLS_OK;
  });
}

void krls_model_free(krls_model* m) { delete m; }

int krls_model_vocab_size(const krls_model* m) {
  return m ? m->model.config().vocab_size : 0;
}

int krls_model_decode(krls_model* m, const int32_t* context, int context_len, int32_t* out,
                      int max_len, int* out_len) {
  if (!m || !context || !out || !out_len || context_len < 0)
    return fail(KRLS_ERR_CONFIG, "bad arguments to krls_model_decode");
  return guarded([&] {
    std::vector<int> ctx(context, context + context_len);
    krls::SamplingConfig cfg;
    std::vector<int> gen = krls::autoregressive_decode(
        m->model, ctx, m->specials, krls::DecodeMode::greedy, cfg, max_len, krls::Rng::from_seed(0));
    *out_len = static_cast<int>(gen.size());
    for (std::size_t i = 0; i < gen.size(); ++i) out[i] = gen[i];
    return KRLS_OK;
  });
}

}  // extern "C"
