#include "trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace krls {

Algorithm parse_algorithm(const std::string& name) {
  if (name == "sl") return Algorithm::sl;
  if (name == "krls") return Algorithm::krls;
  if (name == "krls-pg") return Algorithm::krls_pg;
  if (name == "sl-gold") return Algorithm::sl_gold;
  if (name == "std-rl") return Algorithm::std_rl;
  throw ConfigError("unknown algorithm '" + name + "'");
}

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::sl: return "sl";
    case Algorithm::krls: return "krls";
    case Algorithm::krls_pg: return "krls-pg";
    case Algorithm::sl_gold: return "sl-gold";
    case Algorithm::std_rl: return "std-rl";
  }
  return "?";
}

void TrainerConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (kappa_fraction <= 0.0 || kappa_fraction > 1.0)
    throw ConfigError("train: kappa_fraction must be in (0, 1]");
  if (k_samples < 1) throw ConfigError("train: k_samples must be >= 1");
  if (clip_eps <= 0.0 || clip_eps >= 1.0) throw ConfigError("train: clip_eps must be in (0, 1)");
  if (kl_weight < 0.0) throw ConfigError("train: kl_weight must be >= 0");
  if (lr <= 0.0) throw ConfigError("train: lr must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw ConfigError("train: warmup_fraction must be in [0, 1)");
  if (train_fraction <= 0.0 || train_fraction > 1.0)
    throw ConfigError("train: train_fraction must be in (0, 1]");
  reward.validate();
  sampling.validate();
}

// --- run log ----------------------------------------------------------------

namespace {

std::string fmt_cell(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string render_csv(const std::vector<RunRecord>& records, bool with_wall) {
  std::ostringstream os;
  os << "step,epoch,phase,loss_sl,loss_rl,kl,mean_reward,mean_return,"
        "keyword_acc,token_acc,inform,success,bleu,combined";
  if (with_wall) os << ",wall_ms";
  os << "\n";
  for (const auto& r : records) {
    os << r.step << "," << r.epoch << "," << r.phase << "," << fmt_cell(r.loss_sl) << ","
       << fmt_cell(r.loss_rl) << "," << fmt_cell(r.kl) << "," << fmt_cell(r.mean_reward) << ","
       << fmt_cell(r.mean_return) << "," << fmt_cell(r.keyword_acc) << ","
       << fmt_cell(r.token_acc) << "," << fmt_cell(r.inform) << "," << fmt_cell(r.success) << ","
       << fmt_cell(r.bleu) << "," << fmt_cell(r.combined);
    if (with_wall) os << "," << fmt_cell(r.wall_ms);
    os << "\n";
  }
  return os.str();
}

}  // namespace

void RunLog::write_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << render_csv(records, /*with_wall=*/true);
  if (!f) throw IoError("failed writing: " + path);
}

std::string RunLog::metric_columns() const { return render_csv(records, /*with_wall=*/false); }

// --- losses -----------------------------------------------------------------

ad::Var ppo_loss(ad::Tape& t, const ad::Var& new_logp, const std::vector<double>& old_logp,
                 const std::vector<double>& advantages, double eps) {
  return ad::ppo_objective(t, new_logp, old_logp, advantages, eps);
}

ad::Var pg_loss(ad::Tape& t, const ad::Var& logp, const std::vector<double>& returns) {
  return ad::weighted_neg_mean(t, logp, returns);
}

ad::Var kl_penalty(ad::Tape& t, const ad::Var& policy_log_dists, const ad::Mat& ref_log_dists,
                   const std::vector<bool>& mask) {
  return ad::kl_vs_ref(t, policy_log_dists, ref_log_dists, mask);
}

// --- rewards ----------------------------------------------------------------

namespace {

ad::Mat hidden_states(const PolicyModel& model, const std::vector<int>& context,
                      const std::vector<int>& response, const SpecialIds& sp) {
  ad::Tape tape(false);
  return response_logits(tape, model, context, response, sp, /*want_hidden=*/true).hidden.value();
}

void score_trajectory(Trajectory& traj, const PolicyModel& scorer, const RewardSpec& spec,
                      const std::vector<bool>& key_id, const SpecialIds& sp,
                      const ad::Mat* cached_probs, const ad::Mat* cached_gold_hidden) {
  ScorerView view;
  ad::Mat probs, gold_hidden, gen_hidden, emb;
  switch (spec.variant) {
    case RewardVariant::prob:
      if (!cached_probs) {
        probs = next_word_dists(scorer, traj.context, traj.gold, sp);
        cached_probs = &probs;
      }
      view.probs = cached_probs;
      break;
    case RewardVariant::static_emb:
      emb = scorer.token_embedding().value();
      view.emb_table = &emb;
      break;
    case RewardVariant::bertscore:
      if (!cached_gold_hidden) {
        gold_hidden = hidden_states(scorer, traj.context, traj.gold, sp);
        cached_gold_hidden = &gold_hidden;
      }
      gen_hidden = hidden_states(scorer, traj.context, traj.gen, sp);
      view.gold_hidden = cached_gold_hidden;
      view.gen_hidden = &gen_hidden;
      break;
    default:
      break;
  }
  traj.reward = per_token_reward(traj.gen, traj.gold, traj.key_mask, view, spec);
  traj.reward.terminal = terminal_keyword_f1(traj.gen, traj.gold, key_id, spec.terminal_scale);
  traj.advantage = returns(traj.reward, spec.gamma);
}

}  // namespace

void compute_reward(Trajectory& traj, const PolicyModel& scorer, const RewardSpec& spec,
                    const std::vector<bool>& key_id, const SpecialIds& sp) {
  score_trajectory(traj, scorer, spec, key_id, sp, nullptr, nullptr);
}

ad::Var gold_step(ad::Tape& t, const PolicyModel& model, const PolicyModel& scorer,
                  const EncodedEpisode& episode, const RewardSpec& spec,
                  const std::vector<bool>& key_id, const SpecialIds& sp) {
  Trajectory traj;
  traj.context = episode.context;
  traj.gold = episode.response;
  traj.gen = episode.response;
  traj.key_mask = episode.key_mask;
  compute_reward(traj, scorer, spec, key_id, sp);
  ad::Var logits = response_logits(t, model, episode.context, episode.response, sp).logits;
  ad::Var lp = ad::pick_rows(t, ad::log_softmax_rows(t, logits), episode.response);
  return pg_loss(t, lp, traj.advantage);
}

std::vector<Trajectory> std_rl_collect(const PolicyModel& model,
                                       const std::vector<EncodedEpisode>& episodes,
                                       const SamplingConfig& cfg, const RewardSpec& reward,
                                       const std::vector<bool>& key_id, const SpecialIds& sp,
                                       int max_len, const Rng& rng) {
  cfg.validate();
  if (max_len < 1) throw ParameterError("std_rl_collect: max_len must be >= 1");
  std::vector<Trajectory> out;
  ad::Tape tape(false);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& e = episodes[i];
    Rng ep_rng = rng.split(0x57d, i);
    Trajectory traj;
    traj.episode_index = i;
    traj.context = e.context;
    traj.gold = e.response;
    traj.teacher_forced = false;
    for (int step = 0; step < max_len; ++step) {
      std::vector<int> input = build_model_input(e.context, traj.gen, sp);
      ad::Mat logits = model.forward_logits(tape, input).value();
      Eigen::RowVectorXd z = logits.row(logits.rows() - 1) / cfg.tau;
      double m = z.maxCoeff();
      Eigen::RowVectorXd ez = (z.array() - m).exp();
      Eigen::RowVectorXd p = ez / ez.sum();
      std::vector<int> set = nucleus_set(p, cfg.top_p);
      double mass = 0.0;
      for (int idx : set) mass += p(idx);
      double u = ep_rng.next_double(), acc = 0.0;
      std::size_t pick = set.size() - 1;
      for (std::size_t j = 0; j < set.size(); ++j) {
        acc += p(set[j]) / mass;
        if (u < acc) {
          pick = j;
          break;
        }
      }
      int token = set[pick];
      traj.gen.push_back(token);
      traj.old_logp.push_back(std::log(p(set[pick]) / mass));
      traj.nucleus.push_back(set);
      if (token == sp.eos) break;
    }
    traj.key_mask.resize(traj.gen.size());
    for (std::size_t t = 0; t < traj.gen.size(); ++t) {
      int id = traj.gen[t];
      traj.key_mask[t] =
          id >= 0 && static_cast<std::size_t>(id) < key_id.size() && key_id[static_cast<std::size_t>(id)];
    }
    traj.reward.per_token.assign(traj.gen.size(), 0.0);
    traj.reward.terminal = terminal_keyword_f1(traj.gen, traj.gold, key_id, reward.terminal_scale) +
                           bleu_lite({traj.gen}, {traj.gold});
    traj.advantage = returns(traj.reward, reward.gamma);
    out.push_back(std::move(traj));
  }
  return out;
}

// --- training loop ----------------------------------------------------------

std::vector<EncodedEpisode> select_train_subset(const std::vector<EncodedEpisode>& train,
                                                double fraction) {
  if (train.empty()) throw ParameterError("select_train_subset: empty training split");
  if (fraction <= 0.0 || fraction > 1.0)
    throw ParameterError("select_train_subset: fraction must be in (0, 1]");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::from_seed(0xf5ac1e);
  for (std::size_t i = order.size(); i-- > 1;)
    std::swap(order[i], order[rng.next_below(i + 1)]);
  auto n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(train.size())));
  n = std::max<std::size_t>(1, std::min(n, train.size()));
  std::vector<EncodedEpisode> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(train[order[i]]);
  return out;
}

namespace {

struct LoopShape {
  long steps_per_epoch = 0;
  long kappa_steps = 0;
  long total_optimizer_steps = 0;
};

LoopShape plan_loop(const TrainerConfig& cfg, std::size_t n_episodes) {
  LoopShape shape;
  long n = static_cast<long>(n_episodes);
  long b = cfg.batch_size;
  shape.steps_per_epoch = (n + b - 1) / b;
  shape.kappa_steps = std::max<long>(
      1, std::lround(cfg.kappa_fraction * static_cast<double>(shape.steps_per_epoch)));
  bool has_rl = cfg.algorithm != Algorithm::sl;
  bool has_sl = cfg.algorithm != Algorithm::std_rl;
  long per_traj = cfg.algorithm == Algorithm::sl_gold ? 1 : cfg.k_samples;
  long total = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    long bl = 0;
    for (long s = 1; s <= shape.steps_per_epoch; ++s) {
      long batch_n = std::min(b, n - (s - 1) * b);
      if (has_sl) ++total;
      bl += batch_n;
      if (has_rl && (s % shape.kappa_steps == 0 || s == shape.steps_per_epoch) && bl > 0) {
        long n_traj = bl * per_traj;
        total += (n_traj + b - 1) / b;
        bl = 0;
      }
    }
  }
  shape.total_optimizer_steps = total;
  return shape;
}

double mean_or_nan(const std::vector<double>& v) {
  if (v.empty()) return NAN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TrainOutput krls_train(const TrainerConfig& cfg, const Corpus& corpus, PolicyModel& model,
                       const PolicyModel* scorer, const PolicyModel* kl_ref,
                       const TrainHooks* hooks) {
  cfg.validate();
  const SpecialIds& sp = corpus.vocab.specials;
  const std::vector<bool>& key_id = corpus.vocab.is_key;
  if (model.config().vocab_size != corpus.vocab.size())
    throw ParameterError("krls_train: model/corpus vocabulary size mismatch");

  bool has_rl = cfg.algorithm != Algorithm::sl;
  bool has_sl = cfg.algorithm != Algorithm::std_rl;
  bool needs_scorer = has_rl && cfg.algorithm != Algorithm::std_rl &&
                      (cfg.reward.variant == RewardVariant::prob ||
                       cfg.reward.variant == RewardVariant::static_emb ||
                       cfg.reward.variant == RewardVariant::bertscore);
  if (needs_scorer && !scorer)
    throw ParameterError("krls_train: reward variant '" +
                         reward_variant_name(cfg.reward.variant) + "' needs a scorer model");
  if (scorer && scorer->config().vocab_size != corpus.vocab.size())
    throw ParameterError("krls_train: scorer/corpus vocabulary size mismatch");
  if (cfg.kl_weight > 0.0 && !kl_ref)
    throw ParameterError("krls_train: kl_weight > 0 needs a reference model");

  std::vector<EncodedEpisode> train = encode_episodes(corpus.train, corpus.vocab);
  std::vector<EncodedEpisode> valid = encode_episodes(corpus.valid, corpus.vocab);
  std::vector<EncodedEpisode> test = encode_episodes(corpus.test, corpus.vocab);
  std::vector<EncodedEpisode> subset = select_train_subset(train, cfg.train_fraction);

  int max_resp = 1;
  for (const auto& e : train) max_resp = std::max(max_resp, static_cast<int>(e.response.size()));
  int decode_len = max_resp + 4;

  LoopShape shape = plan_loop(cfg, subset.size());
  ad::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.total_steps = shape.total_optimizer_steps;
  adam_cfg.warmup_steps =
      std::lround(cfg.warmup_fraction * static_cast<double>(shape.total_optimizer_steps));
  ad::Adam adam(model.parameters(), adam_cfg);

  bool use_ppo = cfg.algorithm == Algorithm::krls || cfg.algorithm == Algorithm::std_rl;
  Rng root = Rng::from_seed(cfg.seed);

  // Frozen-model caches, valid for the whole run.
  std::unordered_map<std::size_t, ad::Mat> scorer_probs, scorer_gold_hidden, ref_log_dists;

  TrainOutput out;
  Buffers buffers;
  long step = 0;
  std::uint64_t phase_counter = 0;
  using clock = std::chrono::steady_clock;

  auto record_step = [&](RunRecord r, clock::time_point t0) {
    r.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    out.log.records.push_back(std::move(r));
  };

  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::vector<std::size_t> order(subset.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng = root.split(0xe70c, static_cast<std::uint64_t>(epoch));
      for (std::size_t i = order.size(); i-- > 1;)
        std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);

      for (long s = 1; s <= shape.steps_per_epoch; ++s) {
        std::size_t begin = static_cast<std::size_t>((s - 1) * cfg.batch_size);
        std::size_t end = std::min(subset.size(), begin + static_cast<std::size_t>(cfg.batch_size));

        if (has_sl) {
          auto t0 = clock::now();
          ad::Tape tape;
          ad::Var total;
          for (std::size_t i = begin; i < end; ++i) {
            const auto& e = subset[order[i]];
            ad::Var li = sl_loss(tape, model, e.context, e.response, sp);
            total = total.valid() ? ad::add(tape, total, li) : li;
          }
          total = ad::scale(tape, total, 1.0 / static_cast<double>(end - begin));
          double loss = total.item();
          if (!std::isfinite(loss)) throw NumericError("sl step produced a non-finite loss");
          tape.backward(total);
          adam.step();
          adam.zero_grad();
          ++step;
          RunRecord r;
          r.step = step;
          r.epoch = epoch;
          r.phase = "sl";
          r.loss_sl = loss;
          record_step(std::move(r), t0);
        }
        for (std::size_t i = begin; i < end; ++i) buffers.learned.push_back(order[i]);

        bool phase_due = has_rl && (s % shape.kappa_steps == 0 || s == shape.steps_per_epoch) &&
                         !buffers.learned.empty();
        if (!phase_due) continue;

        // --- RL phase: collect ---
        Rng phase_rng = root.split(0xc011, phase_counter++);
        if (cfg.algorithm == Algorithm::std_rl) {
          std::vector<EncodedEpisode> eps;
          for (auto idx : buffers.learned) eps.push_back(subset[idx]);
          for (int j = 0; j < cfg.k_samples; ++j) {
            auto trajs =
                std_rl_collect(model, eps, cfg.sampling, cfg.reward, key_id, sp, decode_len,
                               phase_rng.split(0xdec0, static_cast<std::uint64_t>(j)));
            for (std::size_t i = 0; i < trajs.size(); ++i) {
              trajs[i].episode_index = buffers.learned[i];
              buffers.replay.push_back(std::move(trajs[i]));
            }
          }
        } else if (cfg.algorithm == Algorithm::sl_gold) {
          for (auto idx : buffers.learned) {
            const auto& e = subset[idx];
            Trajectory traj;
            traj.episode_index = idx;
            traj.context = e.context;
            traj.gold = e.response;
            traj.gen = e.response;
            traj.key_mask = e.key_mask;
            buffers.replay.push_back(std::move(traj));
          }
        } else {
          for (std::size_t i = 0; i < buffers.learned.size(); ++i) {
            std::size_t idx = buffers.learned[i];
            auto trajs = next_word_sample(model, subset[idx], sp, cfg.sampling, cfg.k_samples,
                                          phase_rng.split(0x3a3, i));
            for (auto& traj : trajs) {
              traj.episode_index = idx;
              buffers.replay.push_back(std::move(traj));
            }
          }
        }
        if (hooks && hooks->on_trajectories) hooks->on_trajectories(buffers.replay);

        // --- RL phase: score ---
        if (cfg.algorithm != Algorithm::std_rl) {
          for (auto& traj : buffers.replay) {
            const ad::Mat* probs = nullptr;
            const ad::Mat* gold_hidden = nullptr;
            if (cfg.reward.variant == RewardVariant::prob) {
              auto it = scorer_probs.find(traj.episode_index);
              if (it == scorer_probs.end())
                it = scorer_probs
                         .emplace(traj.episode_index,
                                  next_word_dists(*scorer, traj.context, traj.gold, sp))
                         .first;
              probs = &it->second;
            } else if (cfg.reward.variant == RewardVariant::bertscore) {
              auto it = scorer_gold_hidden.find(traj.episode_index);
              if (it == scorer_gold_hidden.end())
                it = scorer_gold_hidden
                         .emplace(traj.episode_index,
                                  hidden_states(*scorer, traj.context, traj.gold, sp))
                         .first;
              gold_hidden = &it->second;
            }
            const PolicyModel& score_model = scorer ? *scorer : model;
            score_trajectory(traj, score_model, cfg.reward, key_id, sp, probs, gold_hidden);
          }
        }

        if (hooks && hooks->on_rl_phase_start)
          hooks->on_rl_phase_start(buffers.learned.size(), buffers.replay.size());

        // --- RL phase: update ---
        std::vector<std::size_t> rorder(buffers.replay.size());
        std::iota(rorder.begin(), rorder.end(), std::size_t{0});
        Rng mb_rng = phase_rng.split(0x5bf);
        for (std::size_t i = rorder.size(); i-- > 1;)
          std::swap(rorder[i], rorder[mb_rng.next_below(i + 1)]);

        for (std::size_t mb = 0; mb < rorder.size();
             mb += static_cast<std::size_t>(cfg.batch_size)) {
          std::size_t mb_end =
              std::min(rorder.size(), mb + static_cast<std::size_t>(cfg.batch_size));
          auto t0 = clock::now();
          ad::Tape tape;
          ad::Var total;
          std::vector<double> kls, token_rewards, ep_returns;
          for (std::size_t i = mb; i < mb_end; ++i) {
            const Trajectory& traj = buffers.replay[rorder[i]];
            const std::vector<int>& input = traj.teacher_forced ? traj.gold : traj.gen;
            ad::Var logits = response_logits(tape, model, traj.context, input, sp).logits;
            ad::Var li;
            if (use_ppo) {
              ad::Var scaled = ad::scale(tape, logits, 1.0 / cfg.sampling.tau);
              ad::Var lp = ad::nucleus_log_prob(tape, scaled, traj.nucleus, traj.gen);
              li = ppo_loss(tape, lp, traj.old_logp, traj.advantage, cfg.clip_eps);
            } else {
              ad::Var lp = ad::pick_rows(tape, ad::log_softmax_rows(tape, logits), traj.gen);
              li = pg_loss(tape, lp, traj.advantage);
            }
            if (cfg.kl_weight > 0.0) {
              const ad::Mat* ref = nullptr;
              ad::Mat local_ref;
              if (traj.teacher_forced) {
                auto it = ref_log_dists.find(traj.episode_index);
                if (it == ref_log_dists.end())
                  it = ref_log_dists
                           .emplace(traj.episode_index,
                                    ad::Mat(next_word_dists(*kl_ref, traj.context, traj.gold, sp)
                                                .array()
                                                .log()
                                                .matrix()))
                           .first;
                ref = &it->second;
              } else {
                local_ref = next_word_dists(*kl_ref, traj.context, traj.gen, sp)
                                .array()
                                .log()
                                .matrix();
                ref = &local_ref;
              }
              std::vector<bool> mask(traj.gen.size(), true);
              ad::Var lp_rows = ad::log_softmax_rows(tape, logits);
              ad::Var ki = kl_penalty(tape, lp_rows, *ref, mask);
              kls.push_back(ki.item());
              li = ad::add_scaled(tape, li, ki, cfg.kl_weight);
            }
            total = total.valid() ? ad::add(tape, total, li) : li;
            for (double rr : traj.reward.per_token) token_rewards.push_back(rr);
            if (!traj.advantage.empty()) ep_returns.push_back(traj.advantage.front());
          }
          total = ad::scale(tape, total, 1.0 / static_cast<double>(mb_end - mb));
          double loss = total.item();
          if (!std::isfinite(loss)) throw NumericError("rl step produced a non-finite loss");
          tape.backward(total);
          adam.step();
          adam.zero_grad();
          ++step;
          RunRecord r;
          r.step = step;
          r.epoch = epoch;
          r.phase = "rl";
          r.loss_rl = loss;
          r.kl = mean_or_nan(kls);
          r.mean_reward = mean_or_nan(token_rewards);
          r.mean_return = mean_or_nan(ep_returns);
          record_step(std::move(r), t0);
        }

        buffers.learned.clear();
        buffers.replay.clear();
        if (hooks && hooks->on_rl_phase_end)
          hooks->on_rl_phase_end(buffers.learned.size(), buffers.replay.size());
      }

      auto t0 = clock::now();
      EvalReport rep = evaluate(model, valid, sp, decode_len);
      RunRecord r;
      r.step = step;
      r.epoch = epoch;
      r.phase = "eval";
      r.keyword_acc = rep.keyword_accuracy;
      r.token_acc = rep.token_accuracy;
      r.inform = rep.inform;
      r.success = rep.success;
      r.bleu = rep.bleu;
      r.combined = rep.combined;
      record_step(std::move(r), t0);
      if (hooks && hooks->on_epoch_end) hooks->on_epoch_end(epoch);
    }
  } catch (const NumericError& e) {
    RunRecord r;
    r.step = step;
    r.epoch = cfg.epochs;
    r.phase = "abort";
    out.log.records.push_back(std::move(r));
    out.aborted = true;
    out.abort_message = e.what();
    return out;
  }

  out.final_eval = evaluate(model, test, sp, decode_len);
  return out;
}

}  // namespace krls
