#include "reward.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace krls {

RewardVariant parse_reward_variant(const std::string& name) {
  if (name == "prob") return RewardVariant::prob;
  if (name == "zero") return RewardVariant::zero;
  if (name == "error") return RewardVariant::error;
  if (name == "static") return RewardVariant::static_emb;
  if (name == "bertscore") return RewardVariant::bertscore;
  throw ConfigError("unknown reward variant '" + name + "'");
}

std::string reward_variant_name(RewardVariant v) {
  switch (v) {
    case RewardVariant::prob: return "prob";
    case RewardVariant::zero: return "zero";
    case RewardVariant::error: return "error";
    case RewardVariant::static_emb: return "static";
    case RewardVariant::bertscore: return "bertscore";
  }
  return "?";
}

void RewardSpec::validate() const {
  if (mu < 1.0) throw ConfigError("reward: mu must be >= 1");
  if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("reward: gamma must be in [0, 1)");
  if (terminal_scale < 0.0) throw ConfigError("reward: terminal_scale must be >= 0");
}

namespace {

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace

TokenReward per_token_reward(const std::vector<int>& gen, const std::vector<int>& gold,
                             const std::vector<bool>& key_mask, const ScorerView& scorer,
                             const RewardSpec& spec) {
  spec.validate();
  const std::size_t T = gen.size();
  if (gold.size() != T || key_mask.size() != T)
    throw DimensionError("per_token_reward: gen/gold/key_mask lengths differ");

  TokenReward out;
  out.per_token.resize(T);

  auto require = [&](const ad::Mat* m, const char* what) -> const ad::Mat& {
    if (!m) throw ParameterError(std::string("per_token_reward: scorer ") + what + " required");
    return *m;
  };

  switch (spec.variant) {
    case RewardVariant::zero:
      std::fill(out.per_token.begin(), out.per_token.end(), 0.0);
      break;
    case RewardVariant::error:
      for (std::size_t t = 0; t < T; ++t) out.per_token[t] = (gen[t] == gold[t]) ? 1.0 : -1.0;
      break;
    case RewardVariant::prob: {
      const ad::Mat& probs = require(scorer.probs, "probs");
      if (probs.rows() != static_cast<Eigen::Index>(T))
        throw DimensionError("per_token_reward: scorer probs rows must equal length");
      for (std::size_t t = 0; t < T; ++t) {
        auto r = static_cast<Eigen::Index>(t);
        if (std::abs(probs.row(r).sum() - 1.0) > 1e-6)
          throw ValidationError("per_token_reward: scorer probs row " + std::to_string(t) +
                                " not normalized");
        if (gen[t] < 0 || gen[t] >= probs.cols())
          throw DimensionError("per_token_reward: token id out of scorer vocabulary");
        double closeness;
        if (gen[t] == gold[t])
          closeness = 1.0;
        else if (key_mask[t])
          closeness = -1.0;
        else
          closeness = probs(r, gen[t]);
        double weight = key_mask[t] ? spec.mu : 1.0;
        out.per_token[t] = closeness * weight / spec.mu;
      }
      break;
    }
    case RewardVariant::static_emb: {
      const ad::Mat& emb = require(scorer.emb_table, "emb_table");
      for (std::size_t t = 0; t < T; ++t) {
        if (gen[t] < 0 || gen[t] >= emb.rows() || gold[t] < 0 || gold[t] >= emb.rows())
          throw DimensionError("per_token_reward: token id out of scorer embedding table");
        double closeness = cosine(emb.row(gen[t]), emb.row(gold[t]));
        double weight = key_mask[t] ? spec.mu : 1.0;
        out.per_token[t] = closeness * weight / spec.mu;
      }
      break;
    }
    case RewardVariant::bertscore: {
      const ad::Mat& gh = require(scorer.gold_hidden, "gold_hidden");
      const ad::Mat& xh = require(scorer.gen_hidden, "gen_hidden");
      if (gh.rows() != static_cast<Eigen::Index>(T) || xh.rows() != static_cast<Eigen::Index>(T))
        throw DimensionError("per_token_reward: hidden-state rows must equal length");
      for (std::size_t t = 0; t < T; ++t) {
        auto r = static_cast<Eigen::Index>(t);
        double closeness = cosine(xh.row(r), gh.row(r));
        double weight = key_mask[t] ? spec.mu : 1.0;
        out.per_token[t] = closeness * weight / spec.mu;
      }
      break;
    }
  }
  for (double v : out.per_token)
    if (v < -1.0 - 1e-12 || v > 1.0 + 1e-12)
      throw NumericError("per_token_reward produced a value outside [-1, 1]");
  return out;
}

double terminal_keyword_f1(const std::vector<int>& gen, const std::vector<int>& gold,
                           const std::vector<bool>& key_id, double scale) {
  auto key_counts = [&](const std::vector<int>& seq) {
    std::map<int, long> counts;
    for (int id : seq)
      if (id >= 0 && static_cast<std::size_t>(id) < key_id.size() &&
          key_id[static_cast<std::size_t>(id)])
        ++counts[id];
    return counts;
  };
  auto gc = key_counts(gen);
  auto rc = key_counts(gold);
  long n_gen = 0, n_gold = 0, overlap = 0;
  for (auto& [id, n] : gc) n_gen += n;
  for (auto& [id, n] : rc) n_gold += n;
  for (auto& [id, n] : gc) {
    auto it = rc.find(id);
    if (it != rc.end()) overlap += std::min(n, it->second);
  }
  if (n_gen == 0 && n_gold == 0) return scale;  // vacuous success
  if (n_gen == 0 || n_gold == 0) return 0.0;
  double p = static_cast<double>(overlap) / static_cast<double>(n_gen);
  double r = static_cast<double>(overlap) / static_cast<double>(n_gold);
  if (p + r == 0.0) return 0.0;
  return scale * 2.0 * p * r / (p + r);
}

std::vector<double> returns(const TokenReward& reward, double gamma) {
  if (gamma < 0.0 || gamma >= 1.0) throw ParameterError("returns: gamma must be in [0, 1)");
  std::vector<double> g(reward.per_token.size());
  if (g.empty()) return g;
  double acc = 0.0;
  for (std::size_t i = g.size(); i-- > 0;) {
    double r = reward.per_token[i] + (i + 1 == g.size() ? reward.terminal : 0.0);
    acc = r + gamma * acc;
    g[i] = acc;
  }
  return g;
}

}  // namespace krls
