#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

namespace krls {

namespace {

// Accuracy over teacher-forced greedy predictions; key_only restricts to key
// positions.
double forced_accuracy(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                       const SpecialIds& sp, bool key_only) {
  long hits = 0, total = 0;
  for (const auto& e : episodes) {
    ad::Mat dists = next_word_dists(model, e.context, e.response, sp);
    for (std::size_t t = 0; t < e.response.size(); ++t) {
      if (key_only && !e.key_mask[t]) continue;
      Eigen::Index arg = 0;
      dists.row(static_cast<Eigen::Index>(t)).maxCoeff(&arg);
      hits += (static_cast<int>(arg) == e.response[t]) ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw ParameterError("accuracy probe: no positions to score");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double forced_accuracy_fn(const NextTokenFn& next_token,
                          const std::vector<EncodedEpisode>& episodes, bool key_only) {
  long hits = 0, total = 0;
  for (const auto& e : episodes) {
    std::vector<int> prefix;
    for (std::size_t t = 0; t < e.response.size(); ++t) {
      if (!key_only || e.key_mask[t]) {
        hits += (next_token(e.context, prefix) == e.response[t]) ? 1 : 0;
        ++total;
      }
      prefix.push_back(e.response[t]);
    }
  }
  if (total == 0) throw ParameterError("accuracy probe: no positions to score");
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

double keyword_accuracy(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                        const SpecialIds& sp) {
  return forced_accuracy(model, episodes, sp, /*key_only=*/true);
}

double keyword_accuracy(const NextTokenFn& next_token, const std::vector<EncodedEpisode>& episodes) {
  return forced_accuracy_fn(next_token, episodes, /*key_only=*/true);
}

double token_accuracy(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                      const SpecialIds& sp) {
  return forced_accuracy(model, episodes, sp, /*key_only=*/false);
}

double token_accuracy(const NextTokenFn& next_token, const std::vector<EncodedEpisode>& episodes) {
  return forced_accuracy_fn(next_token, episodes, /*key_only=*/false);
}

std::vector<int> offered_entity_tokens(const EncodedEpisode& e) {
  std::set<int> requested(e.requested_slots.begin(), e.requested_slots.end());
  std::set<int> offered;
  for (std::size_t t = 0; t < e.response.size(); ++t)
    if (e.key_mask[t] && !requested.count(e.response[t])) offered.insert(e.response[t]);
  return {offered.begin(), offered.end()};
}

std::pair<double, double> inform_success_on(const std::vector<std::vector<int>>& decoded,
                                            const std::vector<EncodedEpisode>& episodes) {
  if (decoded.size() != episodes.size())
    throw DimensionError("inform_success: decoded/episode counts differ");
  long inform_hits = 0, inform_total = 0, success_hits = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& e = episodes[i];
    std::set<int> gen_tokens(decoded[i].begin(), decoded[i].end());
    if (e.offers_entity) {
      ++inform_total;
      bool ok = true;
      for (int tok : offered_entity_tokens(e)) ok = ok && gen_tokens.count(tok);
      inform_hits += ok ? 1 : 0;
    }
    bool ok = true;
    for (int tok : e.requested_slots) ok = ok && gen_tokens.count(tok);
    success_hits += ok ? 1 : 0;
  }
  double inform = inform_total ? static_cast<double>(inform_hits) / inform_total : 1.0;
  double success =
      episodes.empty() ? 0.0 : static_cast<double>(success_hits) / static_cast<double>(episodes.size());
  return {inform, success};
}

std::pair<double, double> inform_success(const PolicyModel& model,
                                         const std::vector<EncodedEpisode>& episodes,
                                         const SpecialIds& sp, int max_len) {
  std::vector<std::vector<int>> decoded;
  decoded.reserve(episodes.size());
  SamplingConfig cfg;
  for (const auto& e : episodes)
    decoded.push_back(autoregressive_decode(model, e.context, sp, DecodeMode::greedy, cfg, max_len,
                                            Rng::from_seed(0)));
  return inform_success_on(decoded, episodes);
}

double bleu_lite(const std::vector<std::vector<int>>& hypotheses,
                 const std::vector<std::vector<int>>& references) {
  if (hypotheses.empty() || hypotheses.size() != references.size())
    throw ParameterError("bleu_lite: empty corpus or misaligned hypothesis/reference lists");
  long hyp_len = 0, ref_len = 0;
  double log_precision_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    long matches = 0, total = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      const auto& hyp = hypotheses[i];
      const auto& ref = references[i];
      if (n == 1) {
        hyp_len += static_cast<long>(hyp.size());
        ref_len += static_cast<long>(ref.size());
      }
      if (static_cast<int>(hyp.size()) < n) continue;
      std::map<std::vector<int>, long> ref_counts;
      for (std::size_t j = 0; j + n <= ref.size(); ++j)
        ++ref_counts[std::vector<int>(ref.begin() + static_cast<long>(j),
                                      ref.begin() + static_cast<long>(j + n))];
      for (std::size_t j = 0; j + n <= hyp.size(); ++j) {
        std::vector<int> gram(hyp.begin() + static_cast<long>(j),
                              hyp.begin() + static_cast<long>(j + n));
        ++total;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end() && it->second > 0) {
          ++matches;
          --it->second;
        }
      }
    }
    log_precision_sum += std::log(static_cast<double>(matches + 1) / static_cast<double>(total + 1));
  }
  if (hyp_len == 0) return 0.0;
  double bp = hyp_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_precision_sum / 4.0);
}

std::string EvalReport::to_json() const {
  nlohmann::json j = {{"keyword_accuracy", keyword_accuracy},
                      {"token_accuracy", token_accuracy},
                      {"inform", inform},
                      {"success", success},
                      {"bleu", bleu},
                      {"bleu_x100", bleu * 100.0},
                      {"combined", combined},
                      {"combined_by_domain", combined_by_domain},
                      {"episode_count", episode_count}};
  return j.dump(2);
}

EvalReport evaluate(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                    const SpecialIds& sp, int max_len) {
  EvalReport rep;
  rep.episode_count = static_cast<int>(episodes.size());
  rep.keyword_accuracy = keyword_accuracy(model, episodes, sp);
  rep.token_accuracy = token_accuracy(model, episodes, sp);

  std::vector<std::vector<int>> decoded;
  decoded.reserve(episodes.size());
  SamplingConfig cfg;
  for (const auto& e : episodes)
    decoded.push_back(autoregressive_decode(model, e.context, sp, DecodeMode::greedy, cfg, max_len,
                                            Rng::from_seed(0)));
  auto [inform, success] = inform_success_on(decoded, episodes);
  rep.inform = inform;
  rep.success = success;
  std::vector<std::vector<int>> refs;
  refs.reserve(episodes.size());
  for (const auto& e : episodes) refs.push_back(e.response);
  rep.bleu = bleu_lite(decoded, refs);
  rep.combined = (rep.inform + rep.success) * 0.5 + rep.bleu;

  // Per-domain combined breakdown.
  std::map<std::string, std::vector<std::size_t>> by_domain;
  for (std::size_t i = 0; i < episodes.size(); ++i) by_domain[episodes[i].domain].push_back(i);
  for (const auto& [domain, idx] : by_domain) {
    std::vector<EncodedEpisode> sub_e;
    std::vector<std::vector<int>> sub_d, sub_r;
    for (auto i : idx) {
      sub_e.push_back(episodes[i]);
      sub_d.push_back(decoded[i]);
      sub_r.push_back(episodes[i].response);
    }
    auto [di, ds] = inform_success_on(sub_d, sub_e);
    rep.combined_by_domain[domain] = (di + ds) * 0.5 + bleu_lite(sub_d, sub_r);
  }
  return rep;
}

}  // namespace krls
