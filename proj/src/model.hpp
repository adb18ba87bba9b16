#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "sha256.hpp"
#include "tokens.hpp"

namespace krls {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  int max_seq_len = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

// Tiny decoder-only causal transformer. The same type serves as the trainable
// policy, the frozen scorer, and the frozen KL reference.
class PolicyModel {
 public:
  explicit PolicyModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<ad::Var> parameters() const;
  std::vector<std::pair<std::string, ad::Var>> named_parameters() const;
  const ad::Var& token_embedding() const { return tok_emb_; }
  ad::Var& mutable_output_projection() { return w_out_; }

  // Logits for every input position (T x V); row t predicts token t+1.
  // want_hidden exposes the post-final-layer-norm hidden states (T x d).
  ad::Var forward_logits(ad::Tape& t, const std::vector<int>& tokens,
                         ad::Var* hidden_out = nullptr) const;

  long forward_count() const { return forward_count_; }
  void reset_forward_count() { forward_count_ = 0; }

 private:
  ModelConfig cfg_;
  ad::Var tok_emb_;  // V x d
  ad::Var pos_emb_;  // max_seq_len x d
  struct Layer {
    ad::Var wq, wk, wv, wo;              // d x d
    ad::Var ln1_g, ln1_b, ln2_g, ln2_b;  // 1 x d
    ad::Var w1, b1, w2, b2;              // d x d_ff, 1 x d_ff, d_ff x d, 1 x d
  };
  std::vector<Layer> layers_;
  ad::Var lnf_g_, lnf_b_;  // 1 x d
  ad::Var w_out_;          // d x V
  ad::Var b_out_;          // 1 x V
  mutable long forward_count_ = 0;
};

// Full model input for one episode: [bos] context [sep] response.
std::vector<int> build_model_input(const std::vector<int>& context,
                                   const std::vector<int>& response, const SpecialIds& sp);

struct ResponseForward {
  ad::Var logits;  // T_resp x V; row t is the predictive logits for response[t]
  ad::Var hidden;  // T_resp x d when requested, else invalid
};

// Teacher-forced forward over [bos] c [sep] x_gold, sliced to response rows.
// One model forward total.
ResponseForward response_logits(ad::Tape& t, const PolicyModel& model,
                                const std::vector<int>& context,
                                const std::vector<int>& response, const SpecialIds& sp,
                                bool want_hidden = false);

// Row t is the probability distribution of response token t given the context
// and the gold prefix (Eq. of the next-word distribution set). Inference only.
ad::Mat next_word_dists(const PolicyModel& model, const std::vector<int>& context,
                        const std::vector<int>& gold_response, const SpecialIds& sp);

// Mean NLL over response positions (context masked out).
ad::Var sl_loss(ad::Tape& t, const PolicyModel& model, const std::vector<int>& context,
                const std::vector<int>& gold_response, const SpecialIds& sp);

// --- checkpointing ----------------------------------------------------------
// Binary format "KRLS-CKPT v1": magic `KRLS`, u32 version, u32 tensor count;
// per tensor: u32 name length, name bytes, u32 rank, u64 dims, row-major f64
// little-endian payload; trailing 32-byte vocabulary hash. A `<path>.config.json`
// sidecar echoes the ModelConfig.

void save_checkpoint(const PolicyModel& model, const std::string& path, const Hash256& vocab_hash);
PolicyModel load_checkpoint(const std::string& path, const Hash256& expected_vocab_hash);

}  // namespace krls
