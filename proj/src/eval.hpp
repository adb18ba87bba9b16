#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "generation.hpp"
#include "model.hpp"

namespace krls {

struct EvalReport {
  double keyword_accuracy = 0.0;
  double token_accuracy = 0.0;
  double inform = 0.0;
  double success = 0.0;
  double bleu = 0.0;      // on [0, 1]
  double combined = 0.0;  // (inform + success) * 0.5 + bleu
  std::map<std::string, double> combined_by_domain;
  int episode_count = 0;

  std::string to_json() const;
};

// Next-token oracle given context and gold prefix; lets tests substitute a
// hard-wired model.
using NextTokenFn =
    std::function<int(const std::vector<int>& context, const std::vector<int>& gold_prefix)>;

// Greedy next-token prediction at every key position, teacher-forced on the
// gold prefix; one model forward per episode.
double keyword_accuracy(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                        const SpecialIds& sp);
double keyword_accuracy(const NextTokenFn& next_token, const std::vector<EncodedEpisode>& episodes);

// Same probe over all response positions.
double token_accuracy(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                      const SpecialIds& sp);
double token_accuracy(const NextTokenFn& next_token, const std::vector<EncodedEpisode>& episodes);

// inform: entity-offering episodes whose decoded response contains the offered
// entity placeholder(s); success: episodes whose decoded response contains
// every requested slot placeholder. Decoding is greedy autoregressive.
std::pair<double, double> inform_success(const PolicyModel& model,
                                         const std::vector<EncodedEpisode>& episodes,
                                         const SpecialIds& sp, int max_len);
std::pair<double, double> inform_success_on(const std::vector<std::vector<int>>& decoded,
                                            const std::vector<EncodedEpisode>& episodes);

// Entity placeholders of an episode: key tokens of the gold response that were
// not requested (the offer slot by corpus construction).
std::vector<int> offered_entity_tokens(const EncodedEpisode& e);

// Corpus-level geometric mean of 1-4-gram modified precisions with add-one
// smoothing, times brevity penalty.
double bleu_lite(const std::vector<std::vector<int>>& hypotheses,
                 const std::vector<std::vector<int>>& references);

EvalReport evaluate(const PolicyModel& model, const std::vector<EncodedEpisode>& episodes,
                    const SpecialIds& sp, int max_len);

}  // namespace krls
