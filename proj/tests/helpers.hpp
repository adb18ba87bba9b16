#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "autodiff.hpp"
#include "corpus.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace helpers {

inline krls::ad::Mat random_mat(Eigen::Index r, Eigen::Index c, krls::Rng& rng,
                                double scale = 1.0) {
  krls::ad::Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.next_gaussian();
  return m;
}

// Max relative error between analytic gradients and central finite
// differences. build() must reconstruct the loss from the leaves' current
// values on the given tape.
inline double gradcheck(std::vector<krls::ad::Var> leaves,
                        const std::function<krls::ad::Var(krls::ad::Tape&)>& build,
                        double h = 1e-5) {
  namespace ad = krls::ad;
  for (auto& l : leaves) l.zero_grad();
  ad::Tape tape;
  ad::Var loss = build(tape);
  tape.backward(loss);

  auto eval = [&]() {
    ad::Tape t2(false);
    return build(t2).item();
  };

  double worst = 0.0;
  for (auto& leaf : leaves) {
    ad::Mat analytic = leaf.has_grad() ? leaf.grad_ref() : ad::Mat::Zero(leaf.rows(), leaf.cols());
    for (Eigen::Index i = 0; i < leaf.rows(); ++i)
      for (Eigen::Index j = 0; j < leaf.cols(); ++j) {
        double saved = leaf.value()(i, j);
        leaf.value()(i, j) = saved + h;
        double up = eval();
        leaf.value()(i, j) = saved - h;
        double down = eval();
        leaf.value()(i, j) = saved;
        double numeric = (up - down) / (2.0 * h);
        double denom = std::max({std::abs(analytic(i, j)), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic(i, j) - numeric) / denom);
      }
    leaf.zero_grad();
  }
  return worst;
}

inline krls::ModelConfig tiny_model_config(int vocab, std::uint64_t seed) {
  krls::ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_seq_len = 32;
  cfg.seed = seed;
  return cfg;
}

// Small corpus for fast training tests.
inline krls::CorpusSpec small_corpus_spec(int n_train, int n_valid, int n_test,
                                          std::uint64_t seed = 0) {
  krls::CorpusSpec spec = krls::CorpusSpec::defaults();
  spec.n_train = n_train;
  spec.n_valid = n_valid;
  spec.n_test = n_test;
  spec.seed = seed;
  return spec;
}

}  // namespace helpers
