#include <doctest.h>

#include <cmath>

#include "autodiff.hpp"
#include "helpers.hpp"

using namespace krls;
namespace ad = krls::ad;

TEST_CASE("matmul identity and scalars") {
  ad::Tape t(false);
  ad::Mat id = ad::Mat::Identity(2, 2);
  ad::Mat b(2, 2);
  b << 2, 3, 4, 5;
  ad::Var r = ad::matmul(t, ad::Var::constant(id), ad::Var::constant(b));
  CHECK(r.value() == b);

  ad::Var s = ad::matmul(t, ad::Var::constant(ad::Mat::Constant(1, 1, 2.0)),
                         ad::Var::constant(ad::Mat::Constant(1, 1, 3.0)));
  CHECK(s.item() == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng = Rng::from_seed(11);
  ad::Mat a = helpers::random_mat(3, 4, rng);
  ad::Mat b = helpers::random_mat(4, 2, rng);
  ad::Tape t(false);
  ad::Mat got = ad::matmul(t, ad::Var::constant(a), ad::Var::constant(b)).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
      CHECK(std::abs(got(i, j) - acc) < 1e-12);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  ad::Tape t(false);
  try {
    ad::matmul(t, ad::Var::constant(ad::Mat::Zero(2, 3)), ad::Var::constant(ad::Mat::Zero(2, 3)));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("softmax rows: uniform, analytic, oracle, invariances") {
  ad::Tape t(false);
  ad::Var uni = ad::softmax_rows(t, ad::Var::constant(ad::Mat::Constant(2, 5, 3.0)), 0.7);
  CHECK((uni.value().array() - 0.2).abs().maxCoeff() < 1e-12);

  ad::Mat l(1, 2);
  l << 0.0, std::log(3.0);
  ad::Mat p = ad::softmax_rows(t, ad::Var::constant(l), 1.0).value();
  CHECK(std::abs(p(0, 0) - 0.25) < 1e-12);
  CHECK(std::abs(p(0, 1) - 0.75) < 1e-12);

  Rng rng = Rng::from_seed(5);
  ad::Mat logits = helpers::random_mat(4, 7, rng, 2.0);
  ad::Mat got = ad::softmax_rows(t, ad::Var::constant(logits), 1.1).value();
  for (int i = 0; i < 4; ++i) {
    Eigen::RowVectorXd e = (logits.row(i) / 1.1).array().exp();
    Eigen::RowVectorXd want = e / e.sum();
    CHECK((got.row(i) - want).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(got.row(i).sum() - 1.0) < 1e-12);
  }

  // Invariant under adding a constant to all logits.
  ad::Mat shifted = ad::softmax_rows(t, ad::Var::constant(logits.array() + 100.0), 1.1).value();
  CHECK((shifted - got).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(ad::softmax_rows(t, ad::Var::constant(logits), 0.0), ParameterError);
  CHECK_THROWS_AS(ad::softmax_rows(t, ad::Var::constant(logits), -1.0), ParameterError);
}

TEST_CASE("nll over masked positions") {
  ad::Tape t(false);
  // Probability 1 on every target: log-probs of 0 at the targets.
  ad::Mat lp = ad::Mat::Constant(3, 4, -50.0);
  lp(0, 1) = 0.0;
  lp(1, 2) = 0.0;
  lp(2, 0) = 0.0;
  std::vector<int> targets = {1, 2, 0};
  std::vector<bool> mask(3, true);
  CHECK(ad::nll_masked(t, ad::Var::constant(lp), targets, mask).item() == 0.0);

  int V = 9;
  ad::Var lsm = ad::log_softmax_rows(t, ad::Var::constant(ad::Mat::Zero(3, V)));
  CHECK(std::abs(ad::nll_masked(t, lsm, targets, mask).item() - std::log(double(V))) < 1e-12);

  Rng rng = Rng::from_seed(77);
  ad::Mat logits = helpers::random_mat(5, 6, rng);
  ad::Var l2 = ad::log_softmax_rows(t, ad::Var::constant(logits));
  std::vector<int> tg = {0, 5, 2, 3, 1};
  std::vector<bool> m2 = {true, false, true, true, false};
  double manual = 0.0;
  int cnt = 0;
  for (int i = 0; i < 5; ++i)
    if (m2[size_t(i)]) {
      manual += -l2.value()(i, tg[size_t(i)]);
      ++cnt;
    }
  CHECK(std::abs(ad::nll_masked(t, l2, tg, m2).item() - manual / cnt) < 1e-12);

  std::vector<bool> empty_mask(5, false);
  CHECK_THROWS_AS(ad::nll_masked(t, l2, tg, empty_mask), ParameterError);
}

TEST_CASE("backward basics") {
  // Loss independent of a parameter leaves its gradient zero.
  ad::Var x = ad::Var::leaf(ad::Mat::Constant(1, 1, 2.0), true);
  ad::Var y = ad::Var::leaf(ad::Mat::Constant(1, 1, 3.0), true);
  ad::Var z = ad::Var::leaf(ad::Mat::Constant(1, 1, 4.0), true);
  ad::Tape t;
  ad::Var loss = ad::matmul(t, x, y);
  t.backward(loss);
  CHECK(x.grad_ref()(0, 0) == 3.0);
  CHECK(y.grad_ref()(0, 0) == 2.0);
  CHECK_FALSE(z.has_grad());

  ad::Tape t2;
  CHECK_THROWS_AS(t2.backward(ad::Var::leaf(ad::Mat::Zero(2, 2), true)), DimensionError);
}

TEST_CASE("backward linearity: sum of losses equals summed backwards") {
  Rng rng = Rng::from_seed(3);
  ad::Var w = ad::Var::leaf(helpers::random_mat(3, 3, rng), true);
  ad::Mat a = helpers::random_mat(1, 3, rng);
  ad::Mat b = helpers::random_mat(3, 1, rng);

  auto loss1 = [&](ad::Tape& t) {
    return ad::matmul(t, ad::matmul(t, ad::Var::constant(a), w), ad::Var::constant(b));
  };
  auto loss2 = [&](ad::Tape& t) {
    return ad::matmul(t, ad::matmul(t, ad::Var::constant(a), ad::relu(t, w)),
                      ad::Var::constant(b));
  };

  ad::Tape t1;
  t1.backward(loss1(t1));
  ad::Mat g1 = w.grad_ref();
  w.zero_grad();
  ad::Tape t2;
  t2.backward(loss2(t2));
  ad::Mat g2 = w.grad_ref();
  w.zero_grad();
  ad::Tape t3;
  t3.backward(ad::add(t3, loss1(t3), loss2(t3)));
  CHECK((w.grad_ref() - (g1 + g2)).cwiseAbs().maxCoeff() < 1e-12);
  w.zero_grad();
}

TEST_CASE("gradcheck: primitive chain") {
  Rng rng = Rng::from_seed(21);
  ad::Var w = ad::Var::leaf(helpers::random_mat(4, 4, rng, 0.5), true);
  ad::Var bias = ad::Var::leaf(helpers::random_mat(1, 4, rng, 0.5), true);
  ad::Var gain = ad::Var::leaf(ad::Mat::Ones(1, 4), true);
  ad::Mat x = helpers::random_mat(3, 4, rng);
  std::vector<int> ids = {2, 0, 1};

  auto build = [&](ad::Tape& t) {
    ad::Var h = ad::add_row(t, ad::matmul(t, ad::Var::constant(x), w), bias);
    h = ad::layer_norm(t, ad::relu(t, h), gain, bias);
    ad::Var lp = ad::log_softmax_rows(t, h);
    std::vector<bool> mask(3, true);
    return ad::nll_masked(t, lp, ids, mask);
  };
  CHECK(helpers::gradcheck({w, bias, gain}, build) < 1e-4);
}

TEST_CASE("gradcheck: causal softmax, slices, concat, embedding") {
  Rng rng = Rng::from_seed(22);
  ad::Var table = ad::Var::leaf(helpers::random_mat(6, 4, rng, 0.5), true);
  std::vector<int> ids = {4, 1, 1, 5};

  auto build = [&](ad::Tape& t) {
    ad::Var e = ad::embedding_rows(t, table, ids);
    ad::Var left = ad::slice_cols(t, e, 0, 2);
    ad::Var right = ad::slice_cols(t, e, 2, 2);
    ad::Var scores = ad::matmul_nt(t, left, left);
    ad::Var att = ad::causal_softmax(t, scores);
    ad::Var mix = ad::matmul(t, att, right);
    ad::Var both = ad::concat_cols(t, {mix, ad::slice_rows(t, e, 0, 4)});
    ad::Var lp = ad::log_softmax_rows(t, both);
    std::vector<bool> mask = {true, false, true, true};
    return ad::nll_masked(t, lp, {0, 1, 2, 3}, mask);
  };
  CHECK(helpers::gradcheck({table}, build) < 1e-4);
}

TEST_CASE("gradcheck: rl objectives") {
  Rng rng = Rng::from_seed(23);
  ad::Var logits = ad::Var::leaf(helpers::random_mat(4, 8, rng), true);
  std::vector<int> ids = {3, 7, 0, 2};
  std::vector<double> adv = {0.5, -1.2, 0.05, 2.0};
  std::vector<double> old_lp = {-1.0, -0.2, -2.5, -0.7};
  std::vector<std::vector<int>> sets = {{3, 1, 2}, {7, 4}, {0, 5, 6, 1}, {2, 3}};
  ad::Mat ref = helpers::random_mat(4, 8, rng);
  // Make the reference a valid log-distribution.
  for (int i = 0; i < 4; ++i) {
    Eigen::RowVectorXd e = ref.row(i).array().exp();
    ref.row(i) = (e / e.sum()).array().log();
  }

  auto pg = [&](ad::Tape& t) {
    return ad::weighted_neg_mean(t, ad::pick_rows(t, ad::log_softmax_rows(t, logits), ids), adv);
  };
  CHECK(helpers::gradcheck({logits}, pg) < 1e-4);

  auto ppo = [&](ad::Tape& t) {
    ad::Var lp = ad::nucleus_log_prob(t, ad::scale(t, logits, 1.0 / 1.1), sets, ids);
    return ad::ppo_objective(t, lp, old_lp, adv, 0.2);
  };
  CHECK(helpers::gradcheck({logits}, ppo) < 1e-4);

  auto kl = [&](ad::Tape& t) {
    std::vector<bool> mask = {true, true, false, true};
    return ad::kl_vs_ref(t, ad::log_softmax_rows(t, logits), ref, mask);
  };
  CHECK(helpers::gradcheck({logits}, kl) < 1e-4);

  auto combined = [&](ad::Tape& t) {
    std::vector<bool> mask(4, true);
    ad::Var a = pg(t);
    ad::Var b = ad::kl_vs_ref(t, ad::log_softmax_rows(t, logits), ref, mask);
    return ad::add_scaled(t, a, b, 0.01);
  };
  CHECK(helpers::gradcheck({logits}, combined) < 1e-4);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ad::Var p = ad::Var::leaf(ad::Mat::Constant(2, 2, 1.5), true);
  ad::AdamConfig cfg;
  cfg.lr = 0.1;
  ad::Adam opt({p}, cfg);
  p.grad() = ad::Mat::Zero(2, 2);
  for (int i = 0; i < 3; ++i) opt.step();
  CHECK((p.value().array() == 1.5).all());
}

TEST_CASE("adam: warmup step 0 has zero learning rate") {
  ad::Var p = ad::Var::leaf(ad::Mat::Constant(1, 1, 2.0), true);
  ad::AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.warmup_steps = 10;
  cfg.total_steps = 100;
  CHECK(ad::scheduled_lr(cfg, 0) == 0.0);
  ad::Adam opt({p}, cfg);
  p.grad() = ad::Mat::Constant(1, 1, 4.0);
  opt.step();
  CHECK(p.value()(0, 0) == 2.0);
}

TEST_CASE("adam: scheduled lr is piecewise linear") {
  ad::AdamConfig cfg;
  cfg.lr = 1.0;
  cfg.warmup_steps = 4;
  cfg.total_steps = 8;
  CHECK(ad::scheduled_lr(cfg, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ad::scheduled_lr(cfg, 4) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ad::scheduled_lr(cfg, 6) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ad::scheduled_lr(cfg, 8) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("adam: single scalar step matches the hand recurrence") {
  double theta = 1.0, g = 0.3, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = (1 - b1) * g;
  double v = (1 - b2) * g * g;
  double mhat = m / (1 - b1);
  double vhat = v / (1 - b2);
  double want = theta - lr * mhat / (std::sqrt(vhat) + eps);

  ad::Var p = ad::Var::leaf(ad::Mat::Constant(1, 1, theta), true);
  ad::AdamConfig cfg;
  cfg.lr = lr;
  ad::Adam opt({p}, cfg);
  p.grad() = ad::Mat::Constant(1, 1, g);
  opt.step();
  CHECK(std::abs(p.value()(0, 0) - want) < 1e-12);
}

TEST_CASE("adam: NaN gradient halts training") {
  ad::Var p = ad::Var::leaf(ad::Mat::Constant(1, 1, 1.0), true);
  ad::Adam opt({p}, {});
  p.grad() = ad::Mat::Constant(1, 1, std::nan(""));
  CHECK_THROWS_AS(opt.step(), NumericError);
}
