#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"

namespace krls::ad {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat value;
  Mat grad;  // allocated (zeroed) only when the node participates in a backward pass
  bool requires_grad = false;
};

// Shared handle to a tape node. Parameters are long-lived Vars whose grads
// accumulate across backward() calls until zero_grad is applied.
class Var {
 public:
  Var() = default;
  static Var leaf(Mat value, bool requires_grad);
  static Var constant(Mat value) { return leaf(std::move(value), false); }
  static Var scalar(double v, bool requires_grad = false);

  bool valid() const { return n_ != nullptr; }
  const Mat& value() const { return n_->value; }
  Mat& value() { return n_->value; }
  Mat& grad();  // ensures allocation
  const Mat& grad_ref() const { return n_->grad; }
  bool has_grad() const { return n_->grad.size() == n_->value.size() && n_->grad.size() > 0; }
  bool requires_grad() const { return n_->requires_grad; }
  Eigen::Index rows() const { return n_->value.rows(); }
  Eigen::Index cols() const { return n_->value.cols(); }
  double item() const;
  void zero_grad();

  std::shared_ptr<Node> node() const { return n_; }

 private:
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}
  std::shared_ptr<Node> n_;
};

// Records backward closures in execution order; backward() replays them in
// reverse exactly once, then discards them. A Tape and its intermediate nodes
// are confined to one thread.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void push(std::function<void()> op) { ops_.push_back(std::move(op)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  // loss must be a 1x1 node that requires grad.
  void backward(const Var& loss);

 private:
  bool recording_;
  std::vector<std::function<void()>> ops_;
};

// --- primitives -------------------------------------------------------------

Var matmul(Tape& t, const Var& a, const Var& b);
Var matmul_nt(Tape& t, const Var& a, const Var& b);  // a * b^T
Var add(Tape& t, const Var& a, const Var& b);
Var add_row(Tape& t, const Var& a, const Var& row_bias);  // bias: 1 x cols
Var scale(Tape& t, const Var& a, double s);
Var relu(Tape& t, const Var& a);
Var slice_cols(Tape& t, const Var& a, Eigen::Index start, Eigen::Index n);
Var slice_rows(Tape& t, const Var& a, Eigen::Index start, Eigen::Index n);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var embedding_rows(Tape& t, const Var& table, const std::vector<int>& ids);
Var layer_norm(Tape& t, const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// Row-wise softmax with temperature; tau <= 0 is a parameter error.
Var softmax_rows(Tape& t, const Var& logits, double tau = 1.0);
Var log_softmax_rows(Tape& t, const Var& logits);
// Square T x T scores; row i is a softmax over columns <= i, zero elsewhere.
Var causal_softmax(Tape& t, const Var& scores);

// out[t] = log_probs(t, ids[t]) as a T x 1 column.
Var pick_rows(Tape& t, const Var& log_probs, const std::vector<int>& ids);

// Mean of -log p over masked positions; empty mask is an error.
Var nll_masked(Tape& t, const Var& log_probs, const std::vector<int>& targets,
               const std::vector<bool>& mask);

// Policy-gradient core: mean over t of -(w[t] * v[t]); weights are constants.
Var weighted_neg_mean(Tape& t, const Var& v, const std::vector<double>& weights);

// Clipped surrogate: mean over t of -min(r*A, clip(r, 1-eps, 1+eps)*A),
// r = exp(new_lp - old_lp). old_lp and adv are constants.
Var ppo_objective(Tape& t, const Var& new_lp, const std::vector<double>& old_lp,
                  const std::vector<double>& adv, double eps);

// Mean over masked rows of KL(p || q) where p = exp(lp) row-wise and
// ref_log_probs are constants.
Var kl_vs_ref(Tape& t, const Var& lp, const Mat& ref_log_probs, const std::vector<bool>& row_mask);

// Log-prob of ids[t] under the softmax of row t restricted to the index set
// sets[t] (temperature already applied to the logits).
Var nucleus_log_prob(Tape& t, const Var& scaled_logits, const std::vector<std::vector<int>>& sets,
                     const std::vector<int>& ids);

Var add_scaled(Tape& t, const Var& a, const Var& b, double alpha);  // a + alpha*b

void check_finite(const Mat& m, const char* what);

// --- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long warmup_steps = 0;
  long total_steps = 0;  // 0 = constant after warmup
};

// Piecewise-linear schedule: 0 -> lr over warmup_steps, then linear decay to 0
// at total_steps. Step 0 has rate 0 when warmup is enabled.
double scheduled_lr(const AdamConfig& cfg, long step);

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg);

  long step_count() const { return step_; }
  double current_lr() const { return scheduled_lr(cfg_, step_); }
  // Standard Adam with bias correction; throws NumericError on NaN grads.
  void step();
  void zero_grad();

 private:
  std::vector<Var> params_;
  std::vector<Mat> m_, v_;
  AdamConfig cfg_;
  long step_ = 0;
};

}  // namespace krls::ad
