#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "eval.hpp"
#include "generation.hpp"
#include "model.hpp"
#include "reward.hpp"

namespace krls {

enum class Algorithm { sl, krls, krls_pg, sl_gold, std_rl };

Algorithm parse_algorithm(const std::string& name);
std::string algorithm_name(Algorithm a);

struct TrainerConfig {
  Algorithm algorithm = Algorithm::krls;
  int epochs = 5;
  int batch_size = 4;
  double kappa_fraction = 0.5;  // RL interval as a fraction of steps per epoch
  int k_samples = 3;
  double clip_eps = 0.2;
  double kl_weight = 0.0;  // 0.01 preset when starting from a finetuned checkpoint
  RewardSpec reward;
  SamplingConfig sampling;
  double lr = 3e-4;
  double warmup_fraction = 0.2;  // of total training steps
  double train_fraction = 1.0;   // low-resource prefix of the shuffled training split
  std::uint64_t seed = 0;

  void validate() const;
};

// B_L holds SL-trained episode indices; B_R holds sampled trajectories.
// Both are cleared at the end of every RL phase.
struct Buffers {
  std::vector<std::size_t> learned;
  std::vector<Trajectory> replay;
};

struct RunRecord {
  long step = 0;
  int epoch = 0;
  std::string phase;  // sl | rl | eval | abort
  double loss_sl = NAN, loss_rl = NAN, kl = NAN;
  double mean_reward = NAN, mean_return = NAN;
  double keyword_acc = NAN, token_acc = NAN;
  double inform = NAN, success = NAN, bleu = NAN, combined = NAN;
  double wall_ms = NAN;
};

struct RunLog {
  std::vector<RunRecord> records;
  void write_csv(const std::string& path) const;
  // CSV without the wall_ms column, for replay comparisons.
  std::string metric_columns() const;
};

// Instrumentation points for buffer-semantics checks.
struct TrainHooks {
  // Called when an RL phase begins optimization (after collection) and when
  // it finishes (after clearing), with |B_L| and |B_R|.
  std::function<void(std::size_t, std::size_t)> on_rl_phase_start;
  std::function<void(std::size_t, std::size_t)> on_rl_phase_end;
  // Overrides sampled trajectories (testing; e.g. forcing them to gold).
  std::function<void(std::vector<Trajectory>&)> on_trajectories;
  // After the end-of-epoch evaluation; used for per-epoch checkpoints.
  std::function<void(int epoch)> on_epoch_end;
};

// --- loss building blocks ---------------------------------------------------

// -min(r*A, clip(r, 1-eps, 1+eps)*A), r = exp(new - old), averaged over tokens.
ad::Var ppo_loss(ad::Tape& t, const ad::Var& new_logp, const std::vector<double>& old_logp,
                 const std::vector<double>& advantages, double eps);

// mean of -G_t * logp_t.
ad::Var pg_loss(ad::Tape& t, const ad::Var& logp, const std::vector<double>& returns);

// mean over masked positions of KL(p_theta || p_ref).
ad::Var kl_penalty(ad::Tape& t, const ad::Var& policy_log_dists, const ad::Mat& ref_log_dists,
                   const std::vector<bool>& mask);

// Per-token rewards, terminal keyword F1, and returns for one trajectory,
// using the frozen scorer.
void compute_reward(Trajectory& traj, const PolicyModel& scorer, const RewardSpec& spec,
                    const std::vector<bool>& key_id, const SpecialIds& sp);

// GOLD: policy gradient on the gold response itself, rewarded by the same
// per-token reward function (no sampling).
ad::Var gold_step(ad::Tape& t, const PolicyModel& model, const PolicyModel& scorer,
                  const EncodedEpisode& episode, const RewardSpec& spec,
                  const std::vector<bool>& key_id, const SpecialIds& sp);

// Standard-RL exploration: sampled autoregressive decoding, zero per-token
// reward, terminal = terminal_scale * keyword F1 + sentence BLEU.
std::vector<Trajectory> std_rl_collect(const PolicyModel& model,
                                       const std::vector<EncodedEpisode>& episodes,
                                       const SamplingConfig& cfg, const RewardSpec& reward,
                                       const std::vector<bool>& key_id, const SpecialIds& sp,
                                       int max_len, const Rng& rng);

// --- the training loop ------------------------------------------------------

struct TrainOutput {
  RunLog log;
  EvalReport final_eval;  // on the test split; empty when aborted
  bool aborted = false;   // non-finite loss; the log ends with an `abort` record
  std::string abort_message;
};

// SL steps per batch; every kappa steps an RL phase samples k responses per
// learned episode, scores them, and updates the policy from the replay buffer.
// scorer and kl_ref stay frozen; only `model` trains.
TrainOutput krls_train(const TrainerConfig& cfg, const Corpus& corpus, PolicyModel& model,
                       const PolicyModel* scorer, const PolicyModel* kl_ref,
                       const TrainHooks* hooks = nullptr);

// Deterministic low-resource prefix selection (fraction of the shuffled train split).
std::vector<EncodedEpisode> select_train_subset(const std::vector<EncodedEpisode>& train,
                                                double fraction);

}  // namespace krls
