#include "model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rng.hpp"

namespace krls {

using ad::Mat;
using ad::Tape;
using ad::Var;

void ModelConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("model: vocab_size must be positive");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq_len <= 0)
    throw ConfigError("model: all dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
}

namespace {

Var gaussian_param(Rng& rng, Eigen::Index r, Eigen::Index c, double std) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = std * rng.next_gaussian();
  return Var::leaf(std::move(m), true);
}

Var const_param(Eigen::Index r, Eigen::Index c, double v) {
  return Var::leaf(Mat::Constant(r, c, v), true);
}

}  // namespace

PolicyModel::PolicyModel(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::from_seed(cfg_.seed);
  const int d = cfg_.d_model;
  const double std = 0.02;
  tok_emb_ = gaussian_param(rng, cfg_.vocab_size, d, std);
  pos_emb_ = gaussian_param(rng, cfg_.max_seq_len, d, std);
  layers_.reserve(static_cast<std::size_t>(cfg_.n_layers));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    Layer lay;
    lay.wq = gaussian_param(rng, d, d, std);
    lay.wk = gaussian_param(rng, d, d, std);
    lay.wv = gaussian_param(rng, d, d, std);
    lay.wo = gaussian_param(rng, d, d, std);
    lay.ln1_g = const_param(1, d, 1.0);
    lay.ln1_b = const_param(1, d, 0.0);
    lay.ln2_g = const_param(1, d, 1.0);
    lay.ln2_b = const_param(1, d, 0.0);
    lay.w1 = gaussian_param(rng, d, cfg_.d_ff, std);
    lay.b1 = const_param(1, cfg_.d_ff, 0.0);
    lay.w2 = gaussian_param(rng, cfg_.d_ff, d, std);
    lay.b2 = const_param(1, d, 0.0);
    layers_.push_back(std::move(lay));
  }
  lnf_g_ = const_param(1, d, 1.0);
  lnf_b_ = const_param(1, d, 0.0);
  w_out_ = gaussian_param(rng, d, cfg_.vocab_size, std);
  b_out_ = const_param(1, cfg_.vocab_size, 0.0);
}

std::vector<std::pair<std::string, Var>> PolicyModel::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& lay = layers_[l];
    std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "wq", lay.wq);
    out.emplace_back(p + "wk", lay.wk);
    out.emplace_back(p + "wv", lay.wv);
    out.emplace_back(p + "wo", lay.wo);
    out.emplace_back(p + "ln1_g", lay.ln1_g);
    out.emplace_back(p + "ln1_b", lay.ln1_b);
    out.emplace_back(p + "ln2_g", lay.ln2_g);
    out.emplace_back(p + "ln2_b", lay.ln2_b);
    out.emplace_back(p + "w1", lay.w1);
    out.emplace_back(p + "b1", lay.b1);
    out.emplace_back(p + "w2", lay.w2);
    out.emplace_back(p + "b2", lay.b2);
  }
  out.emplace_back("lnf_g", lnf_g_);
  out.emplace_back("lnf_b", lnf_b_);
  out.emplace_back("w_out", w_out_);
  out.emplace_back("b_out", b_out_);
  return out;
}

std::vector<Var> PolicyModel::parameters() const {
  std::vector<Var> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v);
  return out;
}

Var PolicyModel::forward_logits(Tape& t, const std::vector<int>& tokens, Var* hidden_out) const {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  if (T == 0) throw DimensionError("forward on empty token sequence");
  if (T > cfg_.max_seq_len)
    throw DimensionError("input length " + std::to_string(T) + " exceeds max_seq_len " +
                         std::to_string(cfg_.max_seq_len));
  for (int id : tokens)
    if (id < 0 || id >= cfg_.vocab_size)
      throw DimensionError("unknown token id " + std::to_string(id));
  ++forward_count_;

  const int dh = cfg_.d_model / cfg_.n_heads;
  Var x = ad::add(t, ad::embedding_rows(t, tok_emb_, tokens), ad::slice_rows(t, pos_emb_, 0, T));
  for (const auto& lay : layers_) {
    Var h = ad::layer_norm(t, x, lay.ln1_g, lay.ln1_b);
    Var q = ad::matmul(t, h, lay.wq);
    Var k = ad::matmul(t, h, lay.wk);
    Var v = ad::matmul(t, h, lay.wv);
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int hd = 0; hd < cfg_.n_heads; ++hd) {
      Var qh = ad::slice_cols(t, q, hd * dh, dh);
      Var kh = ad::slice_cols(t, k, hd * dh, dh);
      Var vh = ad::slice_cols(t, v, hd * dh, dh);
      Var scores = ad::scale(t, ad::matmul_nt(t, qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
      Var attn = ad::causal_softmax(t, scores);
      heads.push_back(ad::matmul(t, attn, vh));
    }
    Var merged = ad::matmul(t, ad::concat_cols(t, heads), lay.wo);
    x = ad::add(t, x, merged);
    Var h2 = ad::layer_norm(t, x, lay.ln2_g, lay.ln2_b);
    Var ff = ad::relu(t, ad::add_row(t, ad::matmul(t, h2, lay.w1), lay.b1));
    x = ad::add(t, x, ad::add_row(t, ad::matmul(t, ff, lay.w2), lay.b2));
  }
  Var hidden = ad::layer_norm(t, x, lnf_g_, lnf_b_);
  if (hidden_out) *hidden_out = hidden;
  return ad::add_row(t, ad::matmul(t, hidden, w_out_), b_out_);
}

std::vector<int> build_model_input(const std::vector<int>& context,
                                   const std::vector<int>& response, const SpecialIds& sp) {
  std::vector<int> input;
  input.reserve(context.size() + response.size() + 2);
  input.push_back(sp.bos);
  input.insert(input.end(), context.begin(), context.end());
  input.push_back(sp.sep);
  input.insert(input.end(), response.begin(), response.end());
  return input;
}

ResponseForward response_logits(Tape& t, const PolicyModel& model, const std::vector<int>& context,
                                const std::vector<int>& response, const SpecialIds& sp,
                                bool want_hidden) {
  if (response.empty()) throw DimensionError("response must not be empty");
  std::vector<int> input = build_model_input(context, response, sp);
  Var hidden;
  Var logits = model.forward_logits(t, input, want_hidden ? &hidden : nullptr);
  // Position of [sep] predicts response[0]; the last response token predicts nothing.
  const auto start = static_cast<Eigen::Index>(context.size() + 1);
  const auto T = static_cast<Eigen::Index>(response.size());
  ResponseForward out;
  out.logits = ad::slice_rows(t, logits, start, T);
  if (want_hidden) {
    // Hidden states at the response token positions themselves.
    out.hidden = ad::slice_rows(t, hidden, start + 1, T);
  }
  return out;
}

ad::Mat next_word_dists(const PolicyModel& model, const std::vector<int>& context,
                        const std::vector<int>& gold_response, const SpecialIds& sp) {
  Tape t(false);
  Var logits = response_logits(t, model, context, gold_response, sp).logits;
  return ad::softmax_rows(t, logits).value();
}

Var sl_loss(Tape& t, const PolicyModel& model, const std::vector<int>& context,
            const std::vector<int>& gold_response, const SpecialIds& sp) {
  Var logits = response_logits(t, model, context, gold_response, sp).logits;
  Var lp = ad::log_softmax_rows(t, logits);
  std::vector<bool> mask(gold_response.size(), true);
  return ad::nll_masked(t, lp, gold_response, mask);
}

// --- checkpointing ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'K', 'R', 'L', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
void read_pod(std::ifstream& f, T& v) {
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!f) throw CheckpointError(CheckpointError::Reason::truncated, "truncated checkpoint file");
}

}  // namespace

void save_checkpoint(const PolicyModel& model, const std::string& path, const Hash256& vocab_hash) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  write_pod(f, kVersion);
  auto named = model.named_parameters();
  write_pod(f, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, var] : named) {
    write_pod(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(f, static_cast<std::uint32_t>(2));
    write_pod(f, static_cast<std::uint64_t>(var.rows()));
    write_pod(f, static_cast<std::uint64_t>(var.cols()));
    const Mat& m = var.value();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod(f, m(r, c));
  }
  f.write(reinterpret_cast<const char*>(vocab_hash.data()),
          static_cast<std::streamsize>(vocab_hash.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path);
  f.close();

  const auto& cfg = model.config();
  nlohmann::json j = {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
                      {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
                      {"d_ff", cfg.d_ff},             {"max_seq_len", cfg.max_seq_len},
                      {"seed", cfg.seed}};
  std::ofstream side(path + ".config.json", std::ios::trunc);
  if (!side) throw IoError("cannot write checkpoint sidecar: " + path + ".config.json");
  side << j.dump(2) << "\n";
}

PolicyModel load_checkpoint(const std::string& path, const Hash256& expected_vocab_hash) {
  std::ifstream side(path + ".config.json");
  if (!side) throw IoError("missing checkpoint sidecar: " + path + ".config.json");
  nlohmann::json j;
  try {
    side >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad checkpoint sidecar: " + std::string(e.what()));
  }
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();

  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4] = {};
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Reason::not_a_checkpoint, "not a checkpoint: " + path);
  std::uint32_t version = 0;
  read_pod(f, version);
  if (version != kVersion)
    throw CheckpointError(CheckpointError::Reason::version_mismatch,
                          "unsupported checkpoint version " + std::to_string(version));
  std::uint32_t count = 0;
  read_pod(f, count);

  PolicyModel model(cfg);
  auto named = model.named_parameters();
  if (count != named.size())
    throw CheckpointError(CheckpointError::Reason::truncated,
                          "checkpoint tensor count does not match model config");
  for (auto& [name, var] : named) {
    std::uint32_t name_len = 0;
    read_pod(f, name_len);
    std::string got(name_len, '\0');
    f.read(got.data(), name_len);
    if (!f) throw CheckpointError(CheckpointError::Reason::truncated, "truncated checkpoint file");
    if (got != name)
      throw CheckpointError(CheckpointError::Reason::truncated,
                            "unexpected tensor '" + got + "', wanted '" + name + "'");
    std::uint32_t rank = 0;
    read_pod(f, rank);
    if (rank != 2)
      throw CheckpointError(CheckpointError::Reason::truncated, "unsupported tensor rank");
    std::uint64_t rows = 0, cols = 0;
    read_pod(f, rows);
    read_pod(f, cols);
    Mat& m = var.value();
    if (static_cast<Eigen::Index>(rows) != m.rows() || static_cast<Eigen::Index>(cols) != m.cols())
      throw CheckpointError(CheckpointError::Reason::truncated,
                            "tensor '" + name + "' shape does not match model config");
    for (std::uint64_t r = 0; r < rows; ++r)
      for (std::uint64_t c = 0; c < cols; ++c) {
        double v = 0.0;
        read_pod(f, v);
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      }
  }
  Hash256 hash{};
  f.read(reinterpret_cast<char*>(hash.data()), static_cast<std::streamsize>(hash.size()));
  if (!f) throw CheckpointError(CheckpointError::Reason::truncated, "truncated checkpoint file");
  if (hash != expected_vocab_hash)
    throw CheckpointError(CheckpointError::Reason::vocab_hash_mismatch,
                          "checkpoint vocabulary hash does not match corpus");
  return model;
}

}  // namespace krls
