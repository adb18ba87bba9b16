#pragma once

#include <string>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"

namespace krls {

enum class RewardVariant { prob, zero, error, static_emb, bertscore };

RewardVariant parse_reward_variant(const std::string& name);
std::string reward_variant_name(RewardVariant v);

struct RewardSpec {
  RewardVariant variant = RewardVariant::prob;
  double mu = 5.0;              // importance scale for key tokens, >= 1
  double gamma = 0.9;           // discount in [0, 1)
  double terminal_scale = 5.0;  // keyword-F1 terminal reward scale, >= 0

  void validate() const;
};

struct TokenReward {
  std::vector<double> per_token;  // each in [-1, 1] after standardization
  double terminal = 0.0;
};

// Scorer-side inputs for the reward variants; only the fields a variant needs
// have to be populated.
struct ScorerView {
  const ad::Mat* probs = nullptr;        // T x V teacher-forced rows of p_phi (prob)
  const ad::Mat* emb_table = nullptr;    // V x d scorer token embeddings (static_emb)
  const ad::Mat* gold_hidden = nullptr;  // T x d gold teacher-forced hidden states (bertscore)
  const ad::Mat* gen_hidden = nullptr;   // T x d generated-as-standalone hidden states (bertscore)
};

// Closeness x importance, standardized to [-1, 1] by dividing by mu.
// Variant `prob`: closeness 1 when gen matches gold, -1 for a wrong key token,
// otherwise p_phi(gen_t | gold prefix, c).
TokenReward per_token_reward(const std::vector<int>& gen, const std::vector<int>& gold,
                             const std::vector<bool>& key_mask, const ScorerView& scorer,
                             const RewardSpec& spec);

// Multiset F1 over key tokens in gen vs gold, times scale. Both multisets
// empty counts as F1 = 1; exactly one empty as 0.
double terminal_keyword_f1(const std::vector<int>& gen, const std::vector<int>& gold,
                           const std::vector<bool>& key_id, double scale);

// G_t = sum_l gamma^l r_{t+l}; the terminal reward is folded into the last
// position before discounting. Doubles as the advantage (zero value function).
std::vector<double> returns(const TokenReward& reward, double gamma);

}  // namespace krls
