/* C interface to the KRLS lab core. All functions return a status code:
 * 0 success, 2 configuration error, 3 runtime failure. On failure the
 * thread-local message from krls_last_error() describes the problem. */

#ifndef KRLS_H
#define KRLS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define KRLS_OK 0
#define KRLS_ERR_CONFIG 2
#define KRLS_ERR_RUNTIME 3

/* Last error message for the calling thread; empty string when none. */
const char* krls_last_error(void);

/* Generate the synthetic corpus into out_dir (train/valid/test.jsonl,
 * vocab.json, stats.json). spec_path may be NULL for the built-in defaults;
 * seed overrides the spec seed when >= 0. */
int krls_gen_corpus(const char* spec_path, const char* out_dir, int64_t seed);

/* Train per the JSON config file. algo/init_checkpoint may be NULL (config
 * values apply); seed < 0 keeps the config seed. Writes manifest, run log,
 * checkpoints, and the test-split eval report under out_dir. */
int krls_train(const char* config_path, const char* algo, int64_t seed, const char* out_dir,
               const char* init_checkpoint);

/* Replay a run from its manifest into out_dir. */
int krls_train_manifest(const char* manifest_path, const char* out_dir);

/* Evaluate a checkpoint on one split of a saved corpus; writes an EvalReport
 * JSON to out_json when non-NULL. */
int krls_eval(const char* checkpoint, const char* corpus_dir, const char* split,
              const char* out_json);

/* Time next-word sampling vs autoregressive decoding; writes the timing CSV
 * to out_csv when non-NULL. ratio_out (nullable) receives sample/decode. */
int krls_bench(const char* checkpoint, const char* corpus_dir, int episodes, int resp_len,
               int batch, const char* out_csv, double* ratio_out);

/* Run a kappa/mu/k grid sweep; grid is space-separated assignments like
 * "kappa=0.1,0.5,1.0 mu=2,5,10 k=3". Writes summary.csv under out_dir. */
int krls_sweep(const char* config_path, const char* grid, const char* out_dir);

/* --- model handle ------------------------------------------------------- */

typedef struct krls_model krls_model;

/* Load a checkpoint; vocab_json must be the corpus vocabulary file the
 * checkpoint was trained against (its hash is verified). */
int krls_model_load(const char* checkpoint, const char* vocab_json, krls_model** out);
void krls_model_free(krls_model* m);

int krls_model_vocab_size(const krls_model* m);

/* Greedy autoregressive decoding from a token-id context. Writes up to
 * max_len ids into out and the produced count into out_len. */
int krls_model_decode(krls_model* m, const int32_t* context, int context_len, int32_t* out,
                      int max_len, int* out_len);

#ifdef __cplusplus
}
#endif

#endif /* KRLS_H */
