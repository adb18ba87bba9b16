#include "generation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace krls {

void SamplingConfig::validate() const {
  if (tau <= 0.0) throw ConfigError("sampling: tau must be positive");
  if (top_p <= 0.0 || top_p > 1.0) throw ConfigError("sampling: top_p must be in (0, 1]");
}

std::vector<int> nucleus_set(const Eigen::RowVectorXd& probs, double top_p) {
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs(a) > probs(b); });
  std::vector<int> set;
  double mass = 0.0;
  for (int idx : order) {
    set.push_back(idx);
    mass += probs(idx);
    if (mass >= top_p) break;
  }
  return set;
}

namespace {

// Tempered row distribution plus its nucleus and renormalized log-probs.
struct RowDist {
  std::vector<int> set;            // nucleus indices, probability-sorted
  std::vector<double> renorm_p;    // renormalized probabilities over the set
  std::vector<double> renorm_logp;
  std::vector<double> raw_logp;    // full-vocab log-softmax at tau = 1
};

RowDist make_row_dist(const Eigen::RowVectorXd& logits, double tau, double top_p) {
  RowDist rd;
  Eigen::RowVectorXd z = logits / tau;
  double m = z.maxCoeff();
  Eigen::RowVectorXd e = (z.array() - m).exp();
  Eigen::RowVectorXd p = e / e.sum();
  rd.set = nucleus_set(p, top_p);
  double mass = 0.0;
  for (int idx : rd.set) mass += p(idx);
  rd.renorm_p.reserve(rd.set.size());
  rd.renorm_logp.reserve(rd.set.size());
  for (int idx : rd.set) {
    rd.renorm_p.push_back(p(idx) / mass);
    rd.renorm_logp.push_back(std::log(p(idx) / mass));
  }
  double m1 = logits.maxCoeff();
  double lse = m1 + std::log((logits.array() - m1).exp().sum());
  rd.raw_logp.resize(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    rd.raw_logp[static_cast<std::size_t>(j)] = logits(j) - lse;
  return rd;
}

std::size_t sample_index(const std::vector<double>& probs, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

}  // namespace

std::vector<Trajectory> next_word_sample(const PolicyModel& model, const EncodedEpisode& episode,
                                         const SpecialIds& sp, const SamplingConfig& cfg, int k,
                                         const Rng& episode_rng) {
  cfg.validate();
  if (k < 1) throw ParameterError("next_word_sample: k must be >= 1");
  const std::size_t T = episode.response.size();

  ad::Tape tape(false);
  ad::Mat logits =
      response_logits(tape, model, episode.context, episode.response, sp).logits.value();

  std::vector<RowDist> rows;
  rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t)
    rows.push_back(make_row_dist(logits.row(static_cast<Eigen::Index>(t)), cfg.tau, cfg.top_p));

  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    Rng rng = episode_rng.split(0x5a6d, static_cast<std::uint64_t>(j));
    Trajectory traj;
    traj.context = episode.context;
    traj.gold = episode.response;
    traj.key_mask = episode.key_mask;
    traj.gen.resize(T);
    traj.old_logp.resize(T);
    traj.raw_logp.resize(T);
    traj.nucleus.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      const RowDist& rd = rows[t];
      std::size_t pick = cfg.greedy ? 0 : sample_index(rd.renorm_p, rng.next_double());
      int token = rd.set[pick];
      traj.gen[t] = token;
      traj.old_logp[t] = rd.renorm_logp[pick];
      traj.raw_logp[t] = rd.raw_logp[static_cast<std::size_t>(token)];
      traj.nucleus[t] = rd.set;
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<int> autoregressive_decode(const PolicyModel& model, const std::vector<int>& context,
                                       const SpecialIds& sp, DecodeMode mode,
                                       const SamplingConfig& cfg, int max_len, Rng rng,
                                       bool stop_at_eos) {
  cfg.validate();
  if (max_len < 1) throw ParameterError("autoregressive_decode: max_len must be >= 1");
  std::vector<int> gen;
  ad::Tape tape(false);
  for (int step = 0; step < max_len; ++step) {
    std::vector<int> input = build_model_input(context, gen, sp);
    ad::Mat logits = model.forward_logits(tape, input).value();
    Eigen::RowVectorXd last = logits.row(logits.rows() - 1);
    int token;
    if (mode == DecodeMode::greedy) {
      Eigen::Index arg = 0;
      last.maxCoeff(&arg);
      token = static_cast<int>(arg);
    } else {
      RowDist rd = make_row_dist(last, cfg.tau, cfg.top_p);
      token = rd.set[sample_index(rd.renorm_p, rng.next_double())];
    }
    gen.push_back(token);
    if (stop_at_eos && token == sp.eos) break;
  }
  return gen;
}

BenchReport bench_generation(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                             const SpecialIds& sp, const SamplingConfig& cfg, int batch,
                             int resp_len) {
  if (episodes.size() < 100)
    throw ParameterError("bench_generation: need >= 100 episodes for stable timing");
  if (batch < 1 || resp_len < 1) throw ParameterError("bench_generation: bad batch or length");

  // Force every response to resp_len tokens so the two procedures generate
  // identical token counts.
  std::vector<EncodedEpisode> fixed = episodes;
  for (auto& e : fixed) {
    std::vector<int> r = e.response;
    while (static_cast<int>(r.size()) < resp_len) r.push_back(r.empty() ? sp.eos : r.back());
    r.resize(static_cast<std::size_t>(resp_len));
    e.response = std::move(r);
    e.key_mask.assign(static_cast<std::size_t>(resp_len), false);
  }

  using clock = std::chrono::steady_clock;
  Rng root = Rng::from_seed(cfg.seed);

  BenchReport rep;
  rep.sample.procedure = "next_word_sample";
  rep.decode.procedure = "autoregressive_decode";
  rep.sample.batch = rep.decode.batch = batch;
  rep.sample.episodes = rep.decode.episodes = static_cast<int>(fixed.size());

  for (std::size_t begin = 0; begin < fixed.size(); begin += static_cast<std::size_t>(batch)) {
    std::size_t end = std::min(fixed.size(), begin + static_cast<std::size_t>(batch));
    auto t0 = clock::now();
    for (std::size_t i = begin; i < end; ++i) {
      auto trajs = next_word_sample(model, fixed[i], sp, cfg, 1, root.split(i));
      rep.sample.tokens += static_cast<long>(trajs[0].gen.size());
    }
    auto t1 = clock::now();
    rep.sample.per_batch_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  for (std::size_t begin = 0; begin < fixed.size(); begin += static_cast<std::size_t>(batch)) {
    std::size_t end = std::min(fixed.size(), begin + static_cast<std::size_t>(batch));
    auto t0 = clock::now();
    for (std::size_t i = begin; i < end; ++i) {
      auto gen = autoregressive_decode(model, fixed[i].context, sp, DecodeMode::greedy, cfg,
                                       resp_len, root.split(i, 1), /*stop_at_eos=*/false);
      rep.decode.tokens += static_cast<long>(gen.size());
    }
    auto t1 = clock::now();
    rep.decode.per_batch_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  rep.sample.wall_ms =
      std::accumulate(rep.sample.per_batch_ms.begin(), rep.sample.per_batch_ms.end(), 0.0);
  rep.decode.wall_ms =
      std::accumulate(rep.decode.per_batch_ms.begin(), rep.decode.per_batch_ms.end(), 0.0);
  rep.ratio = rep.decode.wall_ms > 0.0 ? rep.sample.wall_ms / rep.decode.wall_ms : 0.0;
  return rep;
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "procedure,batch,episodes,tokens,wall_ms\n";
  for (const BenchRow* row : {&report.sample, &report.decode})
    f << row->procedure << "," << row->batch << "," << row->episodes << "," << row->tokens << ","
      << row->wall_ms << "\n";
  f << "ratio,,,," << report.ratio << "\n";
  if (!f) throw IoError("failed writing: " + path);
}

}  // namespace krls
