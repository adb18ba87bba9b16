#include "autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace krls::ad {

namespace {

void accumulate(Node& n, const Mat& g) {
  if (n.grad.size() != n.value.size()) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

bool wants_grad(const Tape& t, std::initializer_list<const Var*> inputs) {
  if (!t.recording()) return false;
  for (const Var* v : inputs)
    if (v->requires_grad()) return true;
  return false;
}

}  // namespace

Var Var::leaf(Mat value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Var Var::scalar(double v, bool requires_grad) {
  Mat m(1, 1);
  m(0, 0) = v;
  return leaf(std::move(m), requires_grad);
}

Mat& Var::grad() {
  if (n_->grad.size() != n_->value.size()) n_->grad = Mat::Zero(n_->value.rows(), n_->value.cols());
  return n_->grad;
}

double Var::item() const {
  if (n_->value.size() != 1) throw DimensionError("item() requires a 1x1 tensor");
  return n_->value(0, 0);
}

void Var::zero_grad() {
  if (n_->grad.size() > 0) n_->grad.setZero();
}

void Tape::backward(const Var& loss) {
  if (loss.value().size() != 1) throw DimensionError("backward requires a scalar (1x1) loss");
  if (!loss.requires_grad()) throw ParameterError("backward on a loss that does not require grad");
  auto n = loss.node();
  accumulate(*n, Mat::Ones(1, 1));
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

Var matmul(Tape& t, const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul shape mismatch: (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ") * (" + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  Var out = Var::leaf(a.value() * b.value(), wants_grad(t, {&a, &b}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    t.push([an, bn, on] {
      if (an->requires_grad) accumulate(*an, on->grad * bn->value.transpose());
      if (bn->requires_grad) accumulate(*bn, an->value.transpose() * on->grad);
    });
  }
  return out;
}

Var matmul_nt(Tape& t, const Var& a, const Var& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt shape mismatch: (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ") * (" + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")^T");
  Var out = Var::leaf(a.value() * b.value().transpose(), wants_grad(t, {&a, &b}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    t.push([an, bn, on] {
      if (an->requires_grad) accumulate(*an, on->grad * bn->value);
      if (bn->requires_grad) accumulate(*bn, on->grad.transpose() * an->value);
    });
  }
  return out;
}

Var add(Tape& t, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add shape mismatch");
  Var out = Var::leaf(a.value() + b.value(), wants_grad(t, {&a, &b}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    t.push([an, bn, on] {
      if (an->requires_grad) accumulate(*an, on->grad);
      if (bn->requires_grad) accumulate(*bn, on->grad);
    });
  }
  return out;
}

Var add_row(Tape& t, const Var& a, const Var& row_bias) {
  if (row_bias.rows() != 1 || row_bias.cols() != a.cols())
    throw DimensionError("add_row bias shape mismatch");
  Mat v = a.value();
  v.rowwise() += row_bias.value().row(0);
  Var out = Var::leaf(std::move(v), wants_grad(t, {&a, &row_bias}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = row_bias.node(), on = out.node();
    t.push([an, bn, on] {
      if (an->requires_grad) accumulate(*an, on->grad);
      if (bn->requires_grad) accumulate(*bn, on->grad.colwise().sum());
    });
  }
  return out;
}

Var scale(Tape& t, const Var& a, double s) {
  Var out = Var::leaf(a.value() * s, wants_grad(t, {&a}));
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    t.push([an, on, s] { accumulate(*an, on->grad * s); });
  }
  return out;
}

Var relu(Tape& t, const Var& a) {
  Var out = Var::leaf(a.value().cwiseMax(0.0), wants_grad(t, {&a}));
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    t.push([an, on] {
      accumulate(*an, (an->value.array() > 0.0).cast<double>().matrix().cwiseProduct(on->grad));
    });
  }
  return out;
}

Var slice_cols(Tape& t, const Var& a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw DimensionError("slice_cols out of range");
  Var out = Var::leaf(a.value().middleCols(start, n), wants_grad(t, {&a}));
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    t.push([an, on, start, n] {
      if (an->grad.size() != an->value.size())
        an->grad = Mat::Zero(an->value.rows(), an->value.cols());
      an->grad.middleCols(start, n) += on->grad;
    });
  }
  return out;
}

Var slice_rows(Tape& t, const Var& a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw DimensionError("slice_rows out of range");
  Var out = Var::leaf(a.value().middleRows(start, n), wants_grad(t, {&a}));
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    t.push([an, on, start, n] {
      if (an->grad.size() != an->value.size())
        an->grad = Mat::Zero(an->value.rows(), an->value.cols());
      an->grad.middleRows(start, n) += on->grad;
    });
  }
  return out;
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols row mismatch");
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Var out = Var::leaf(std::move(v), t.recording() && rg);
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<Node>> ins;
    for (const auto& p : parts) ins.push_back(p.node());
    auto on = out.node();
    t.push([ins, on] {
      Eigen::Index at = 0;
      for (const auto& n : ins) {
        if (n->requires_grad) accumulate(*n, on->grad.middleCols(at, n->value.cols()));
        at += n->value.cols();
      }
    });
  }
  return out;
}

Var embedding_rows(Tape& t, const Var& table, const std::vector<int>& ids) {
  Mat v(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw DimensionError("embedding id " + std::to_string(ids[i]) + " out of range");
    v.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  Var out = Var::leaf(std::move(v), wants_grad(t, {&table}));
  if (out.requires_grad()) {
    auto tn = table.node(), on = out.node();
    t.push([tn, on, ids] {
      if (tn->grad.size() != tn->value.size())
        tn->grad = Mat::Zero(tn->value.rows(), tn->value.cols());
      for (std::size_t i = 0; i < ids.size(); ++i)
        tn->grad.row(ids[i]) += on->grad.row(static_cast<Eigen::Index>(i));
    });
  }
  return out;
}

Var layer_norm(Tape& t, const Var& x, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index R = x.rows(), C = x.cols();
  if (gain.rows() != 1 || gain.cols() != C || bias.rows() != 1 || bias.cols() != C)
    throw DimensionError("layer_norm gain/bias shape mismatch");
  Mat xhat(R, C);
  Eigen::VectorXd inv_sigma(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    double mu = x.value().row(r).mean();
    double var = (x.value().row(r).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(r) = is;
    xhat.row(r) = (x.value().row(r).array() - mu) * is;
  }
  Mat v = xhat;
  for (Eigen::Index r = 0; r < R; ++r)
    v.row(r) = v.row(r).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  Var out = Var::leaf(std::move(v), wants_grad(t, {&x, &gain, &bias}));
  if (out.requires_grad()) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    t.push([xn, gn, bn, on, xhat, inv_sigma, C] {
      const Mat& G = on->grad;
      if (gn->requires_grad) accumulate(*gn, (G.cwiseProduct(xhat)).colwise().sum());
      if (bn->requires_grad) accumulate(*bn, G.colwise().sum());
      if (xn->requires_grad) {
        Mat dx(G.rows(), G.cols());
        for (Eigen::Index r = 0; r < G.rows(); ++r) {
          Eigen::RowVectorXd dxhat = G.row(r).cwiseProduct(gn->value.row(0));
          double m1 = dxhat.mean();
          double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
          dx.row(r) =
              inv_sigma(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
        }
        accumulate(*xn, dx);
      }
    });
  }
  return out;
}

Var softmax_rows(Tape& t, const Var& logits, double tau) {
  if (tau <= 0.0) throw ParameterError("softmax temperature must be positive");
  const Eigen::Index R = logits.rows(), C = logits.cols();
  Mat y(R, C);
  for (Eigen::Index r = 0; r < R; ++r) {
    Eigen::RowVectorXd z = logits.value().row(r) / tau;
    double m = z.maxCoeff();
    Eigen::RowVectorXd e = (z.array() - m).exp();
    y.row(r) = e / e.sum();
  }
  Var out = Var::leaf(std::move(y), wants_grad(t, {&logits}));
  if (out.requires_grad()) {
    auto ln = logits.node(), on = out.node();
    t.push([ln, on, tau] {
      const Mat& y = on->value;
      const Mat& G = on->grad;
      Mat dz(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        double dot = G.row(r).dot(y.row(r));
        dz.row(r) = (y.row(r).array() * (G.row(r).array() - dot) / tau).matrix();
      }
      accumulate(*ln, dz);
    });
  }
  return out;
}

Var log_softmax_rows(Tape& t, const Var& logits) {
  const Eigen::Index R = logits.rows(), C = logits.cols();
  Mat lp(R, C);
  for (Eigen::Index r = 0; r < R; ++r) {
    double m = logits.value().row(r).maxCoeff();
    double lse = m + std::log((logits.value().row(r).array() - m).exp().sum());
    lp.row(r) = logits.value().row(r).array() - lse;
  }
  Var out = Var::leaf(std::move(lp), wants_grad(t, {&logits}));
  if (out.requires_grad()) {
    auto ln = logits.node(), on = out.node();
    t.push([ln, on] {
      const Mat& lp = on->value;
      const Mat& G = on->grad;
      Mat dz(lp.rows(), lp.cols());
      for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        double gsum = G.row(r).sum();
        dz.row(r) = G.row(r) - gsum * lp.row(r).array().exp().matrix();
      }
      accumulate(*ln, dz);
    });
  }
  return out;
}

Var causal_softmax(Tape& t, const Var& scores) {
  if (scores.rows() != scores.cols()) throw DimensionError("causal_softmax requires a square matrix");
  const Eigen::Index T = scores.rows();
  Mat y = Mat::Zero(T, T);
  for (Eigen::Index r = 0; r < T; ++r) {
    auto seg = scores.value().row(r).head(r + 1);
    double m = seg.maxCoeff();
    Eigen::RowVectorXd e = (seg.array() - m).exp();
    y.row(r).head(r + 1) = e / e.sum();
  }
  Var out = Var::leaf(std::move(y), wants_grad(t, {&scores}));
  if (out.requires_grad()) {
    auto sn = scores.node(), on = out.node();
    t.push([sn, on, T] {
      const Mat& y = on->value;
      const Mat& G = on->grad;
      Mat dz = Mat::Zero(T, T);
      for (Eigen::Index r = 0; r < T; ++r) {
        auto yr = y.row(r).head(r + 1);
        auto gr = G.row(r).head(r + 1);
        double dot = gr.dot(yr);
        dz.row(r).head(r + 1) = (yr.array() * (gr.array() - dot)).matrix();
      }
      accumulate(*sn, dz);
    });
  }
  return out;
}

Var pick_rows(Tape& t, const Var& log_probs, const std::vector<int>& ids) {
  if (static_cast<Eigen::Index>(ids.size()) != log_probs.rows())
    throw DimensionError("pick_rows: one index per row required");
  Mat v(log_probs.rows(), 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= log_probs.cols()) throw DimensionError("pick_rows index out of range");
    v(static_cast<Eigen::Index>(i), 0) = log_probs.value()(static_cast<Eigen::Index>(i), ids[i]);
  }
  Var out = Var::leaf(std::move(v), wants_grad(t, {&log_probs}));
  if (out.requires_grad()) {
    auto ln = log_probs.node(), on = out.node();
    t.push([ln, on, ids] {
      if (ln->grad.size() != ln->value.size())
        ln->grad = Mat::Zero(ln->value.rows(), ln->value.cols());
      for (std::size_t i = 0; i < ids.size(); ++i)
        ln->grad(static_cast<Eigen::Index>(i), ids[i]) += on->grad(static_cast<Eigen::Index>(i), 0);
    });
  }
  return out;
}

Var nll_masked(Tape& t, const Var& log_probs, const std::vector<int>& targets,
               const std::vector<bool>& mask) {
  if (static_cast<Eigen::Index>(targets.size()) != log_probs.rows() || targets.size() != mask.size())
    throw DimensionError("nll_masked: targets/mask must match rows");
  long count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || targets[i] >= log_probs.cols())
      throw DimensionError("nll_masked target out of vocabulary");
    total -= log_probs.value()(static_cast<Eigen::Index>(i), targets[i]);
    ++count;
  }
  if (count == 0) throw ParameterError("nll_masked: mask selects no positions");
  Var out = Var::scalar(total / count, wants_grad(t, {&log_probs}));
  if (out.requires_grad()) {
    auto ln = log_probs.node(), on = out.node();
    t.push([ln, on, targets, mask, count] {
      double g = on->grad(0, 0) / count;
      if (ln->grad.size() != ln->value.size())
        ln->grad = Mat::Zero(ln->value.rows(), ln->value.cols());
      for (std::size_t i = 0; i < targets.size(); ++i)
        if (mask[i]) ln->grad(static_cast<Eigen::Index>(i), targets[i]) -= g;
    });
  }
  return out;
}

Var weighted_neg_mean(Tape& t, const Var& v, const std::vector<double>& weights) {
  if (v.cols() != 1 || static_cast<std::size_t>(v.rows()) != weights.size())
    throw DimensionError("weighted_neg_mean: column vector and weights must align");
  const auto n = static_cast<double>(weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    total -= weights[i] * v.value()(static_cast<Eigen::Index>(i), 0);
  Var out = Var::scalar(total / n, wants_grad(t, {&v}));
  if (out.requires_grad()) {
    auto vn = v.node(), on = out.node();
    t.push([vn, on, weights, n] {
      double g = on->grad(0, 0) / n;
      Mat d(vn->value.rows(), 1);
      for (std::size_t i = 0; i < weights.size(); ++i)
        d(static_cast<Eigen::Index>(i), 0) = -weights[i] * g;
      accumulate(*vn, d);
    });
  }
  return out;
}

Var ppo_objective(Tape& t, const Var& new_lp, const std::vector<double>& old_lp,
                  const std::vector<double>& adv, double eps) {
  if (eps <= 0.0) throw ParameterError("ppo clip epsilon must be positive");
  const std::size_t n = old_lp.size();
  if (new_lp.cols() != 1 || static_cast<std::size_t>(new_lp.rows()) != n || adv.size() != n)
    throw DimensionError("ppo_objective: arrays must align");
  double total = 0.0;
  std::vector<double> dfactor(n);  // d(loss_i)/d(new_lp_i)
  for (std::size_t i = 0; i < n; ++i) {
    double r = std::exp(new_lp.value()(static_cast<Eigen::Index>(i), 0) - old_lp[i]);
    double a = adv[i];
    double unclipped = r * a;
    double clipped = std::clamp(r, 1.0 - eps, 1.0 + eps) * a;
    if (unclipped <= clipped) {
      total -= unclipped;
      dfactor[i] = -r * a;
    } else {
      total -= clipped;
      // clip(r) has zero slope outside [1-eps, 1+eps]
      dfactor[i] = (r > 1.0 - eps && r < 1.0 + eps) ? -r * a : 0.0;
    }
  }
  Var out = Var::scalar(total / static_cast<double>(n), wants_grad(t, {&new_lp}));
  if (out.requires_grad()) {
    auto vn = new_lp.node(), on = out.node();
    t.push([vn, on, dfactor, n] {
      double g = on->grad(0, 0) / static_cast<double>(n);
      Mat d(static_cast<Eigen::Index>(n), 1);
      for (std::size_t i = 0; i < n; ++i) d(static_cast<Eigen::Index>(i), 0) = dfactor[i] * g;
      accumulate(*vn, d);
    });
  }
  return out;
}

Var kl_vs_ref(Tape& t, const Var& lp, const Mat& ref_log_probs, const std::vector<bool>& row_mask) {
  if (lp.rows() != ref_log_probs.rows() || lp.cols() != ref_log_probs.cols())
    throw DimensionError("kl_vs_ref shape mismatch");
  if (static_cast<std::size_t>(lp.rows()) != row_mask.size())
    throw DimensionError("kl_vs_ref mask must have one entry per row");
  long count = 0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < lp.rows(); ++r) {
    if (!row_mask[static_cast<std::size_t>(r)]) continue;
    total += (lp.value().row(r).array().exp() *
              (lp.value().row(r).array() - ref_log_probs.row(r).array()))
                 .sum();
    ++count;
  }
  if (count == 0) throw ParameterError("kl_vs_ref: mask selects no rows");
  Var out = Var::scalar(total / count, wants_grad(t, {&lp}));
  if (out.requires_grad()) {
    auto ln = lp.node(), on = out.node();
    t.push([ln, on, ref_log_probs, row_mask, count] {
      double g = on->grad(0, 0) / count;
      Mat d = Mat::Zero(ln->value.rows(), ln->value.cols());
      for (Eigen::Index r = 0; r < ln->value.rows(); ++r) {
        if (!row_mask[static_cast<std::size_t>(r)]) continue;
        d.row(r) = g * (ln->value.row(r).array().exp() *
                        (1.0 + ln->value.row(r).array() - ref_log_probs.row(r).array()))
                           .matrix();
      }
      accumulate(*ln, d);
    });
  }
  return out;
}

Var nucleus_log_prob(Tape& t, const Var& scaled_logits, const std::vector<std::vector<int>>& sets,
                     const std::vector<int>& ids) {
  const std::size_t n = ids.size();
  if (static_cast<std::size_t>(scaled_logits.rows()) != n || sets.size() != n)
    throw DimensionError("nucleus_log_prob: one set and one id per row required");
  Mat v(static_cast<Eigen::Index>(n), 1);
  std::vector<double> logz(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = sets[i];
    if (s.empty()) throw ParameterError("nucleus_log_prob: empty nucleus set");
    double m = -1e300;
    for (int j : s) m = std::max(m, scaled_logits.value()(static_cast<Eigen::Index>(i), j));
    double z = 0.0;
    bool found = false;
    for (int j : s) {
      z += std::exp(scaled_logits.value()(static_cast<Eigen::Index>(i), j) - m);
      found = found || (j == ids[i]);
    }
    if (!found) throw ParameterError("nucleus_log_prob: sampled token outside its nucleus");
    logz[i] = m + std::log(z);
    v(static_cast<Eigen::Index>(i), 0) =
        scaled_logits.value()(static_cast<Eigen::Index>(i), ids[i]) - logz[i];
  }
  Var out = Var::leaf(std::move(v), wants_grad(t, {&scaled_logits}));
  if (out.requires_grad()) {
    auto ln = scaled_logits.node(), on = out.node();
    t.push([ln, on, sets, ids, logz] {
      if (ln->grad.size() != ln->value.size())
        ln->grad = Mat::Zero(ln->value.rows(), ln->value.cols());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double g = on->grad(static_cast<Eigen::Index>(i), 0);
        for (int j : sets[i]) {
          double p = std::exp(ln->value(static_cast<Eigen::Index>(i), j) - logz[i]);
          ln->grad(static_cast<Eigen::Index>(i), j) += g * ((j == ids[i] ? 1.0 : 0.0) - p);
        }
      }
    });
  }
  return out;
}

Var add_scaled(Tape& t, const Var& a, const Var& b, double alpha) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add_scaled shape mismatch");
  Var out = Var::leaf(a.value() + alpha * b.value(), wants_grad(t, {&a, &b}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    t.push([an, bn, on, alpha] {
      if (an->requires_grad) accumulate(*an, on->grad);
      if (bn->requires_grad) accumulate(*bn, alpha * on->grad);
    });
  }
  return out;
}

double scheduled_lr(const AdamConfig& cfg, long step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (cfg.total_steps > cfg.warmup_steps) {
    double remain = static_cast<double>(cfg.total_steps - step) /
                    static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr * std::max(0.0, remain);
  }
  return cfg.lr;
}

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  const double lr = current_lr();
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_ + 1));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_ + 1));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    Mat g = p.has_grad() ? p.grad() : Mat::Zero(p.rows(), p.cols());
    if (!g.allFinite()) throw NumericError("NaN/Inf gradient in Adam step");
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    p.value().array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
  ++step_;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace krls::ad
