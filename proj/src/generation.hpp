#pragma once

#include <string>
#include <vector>

#include "corpus.hpp"
#include "model.hpp"
#include "reward.hpp"
#include "rng.hpp"

namespace krls {

struct SamplingConfig {
  double tau = 1.1;
  double top_p = 0.9;
  bool greedy = false;  // tau -> 0 limit: argmax everywhere
  std::uint64_t seed = 0;

  void validate() const;
};

// One sampled response plus everything the RL update needs.
struct Trajectory {
  std::size_t episode_index = 0;
  std::vector<int> context;
  std::vector<int> gold;
  std::vector<bool> key_mask;
  std::vector<int> gen;
  std::vector<double> old_logp;            // under the tempered, nucleus-renormalized dist
  std::vector<double> raw_logp;            // under the raw (tau = 1) model dist, diagnostics
  std::vector<std::vector<int>> nucleus;   // index set each position was sampled from
  TokenReward reward;
  std::vector<double> advantage;           // = returns G_t
  bool teacher_forced = true;              // gold prefix (next-word) vs own prefix (std-RL)
};

// Smallest prefix of probability-sorted indices with cumulative mass >= top_p.
std::vector<int> nucleus_set(const Eigen::RowVectorXd& probs, double top_p);

// KRLS exploration: exactly one model forward per episode; every position of
// every sample drawn independently from the tempered, top-p-truncated row.
// Generated length equals the gold response length.
std::vector<Trajectory> next_word_sample(const PolicyModel& model, const EncodedEpisode& episode,
                                         const SpecialIds& sp, const SamplingConfig& cfg, int k,
                                         const Rng& episode_rng);

enum class DecodeMode { greedy, sample };

// Standard autoregressive decoding; one full model forward per generated
// token. Stops at <eos> unless stop_at_eos is false (timing benchmark).
std::vector<int> autoregressive_decode(const PolicyModel& model, const std::vector<int>& context,
                                       const SpecialIds& sp, DecodeMode mode,
                                       const SamplingConfig& cfg, int max_len, Rng rng,
                                       bool stop_at_eos = true);

struct BenchRow {
  std::string procedure;
  int batch = 0;
  int episodes = 0;
  long tokens = 0;
  double wall_ms = 0.0;
  std::vector<double> per_batch_ms;
};

struct BenchReport {
  BenchRow sample;
  BenchRow decode;
  double ratio = 0.0;  // sample / decode wall time
};

// Wall-clock comparison of the two procedures over the same episodes with
// responses forced to resp_len tokens.
BenchReport bench_generation(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                             const SpecialIds& sp, const SamplingConfig& cfg, int batch,
                             int resp_len);

// CSV columns: procedure, batch, episodes, tokens, wall_ms (ratio as a final row).
void write_bench_csv(const BenchReport& report, const std::string& path);

}  // namespace krls
