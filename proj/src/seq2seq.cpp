// SPDX-License-Identifier: Apache-2.0
#include "iag/seq2seq.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace iag {

using ad::NodePtr;

void ModelConfig::validate() const {
  if (vocab_size < Vocab::kNumSpecial) throw ConfigError("model: vocab_size too small");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || max_len < 2) {
    throw ConfigError("model: invalid hyperparameters");
  }
  if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
}

namespace {

Tensor randn(int r, int c, std::mt19937_64& rng, real_t std_dev) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(std_dev));
  Tensor t(r, c);
  for (auto& x : t.data) x = static_cast<real_t>(dist(rng));
  return t;
}

}  // namespace

Seq2SeqModel::Seq2SeqModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const real_t w_std = static_cast<real_t>(0.05);
  const int d = cfg_.d_model;
  const int dk = d / cfg_.n_heads;
  const int dff = cfg_.ff_dim();

  auto reg = [this](const std::string& name, Tensor t) {
    auto p = ad::param(std::move(t));
    named_.emplace_back(name, p);
    return p;
  };
  auto make_ln = [&](const std::string& prefix) {
    LayerNormParams ln;
    ln.gamma = reg(prefix + ".gamma", Tensor::full(1, d, 1));
    ln.beta = reg(prefix + ".beta", Tensor(1, d));
    return ln;
  };
  auto make_attn = [&](const std::string& prefix) {
    Attention att;
    for (int h = 0; h < cfg_.n_heads; ++h) {
      att.wq.push_back(reg(prefix + ".wq" + std::to_string(h), randn(d, dk, rng, w_std)));
      att.wk.push_back(reg(prefix + ".wk" + std::to_string(h), randn(d, dk, rng, w_std)));
      att.wv.push_back(reg(prefix + ".wv" + std::to_string(h), randn(d, dk, rng, w_std)));
    }
    att.wo = reg(prefix + ".wo", randn(d, d, rng, w_std));
    return att;
  };
  auto make_ffn = [&](const std::string& prefix) {
    FeedForward f;
    f.w1 = reg(prefix + ".w1", randn(d, dff, rng, w_std));
    f.b1 = reg(prefix + ".b1", Tensor(1, dff));
    f.w2 = reg(prefix + ".w2", randn(dff, d, rng, w_std));
    f.b2 = reg(prefix + ".b2", Tensor(1, d));
    return f;
  };

  tok_emb_ = reg("tok_emb", randn(cfg_.vocab_size, d, rng, w_std));
  enc_pos_ = reg("enc_pos", randn(cfg_.max_len, d, rng, w_std));
  dec_pos_ = reg("dec_pos", randn(cfg_.max_len, d, rng, w_std));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    EncoderLayer layer;
    layer.ln1 = make_ln(p + ".ln1");
    layer.self_attn = make_attn(p + ".attn");
    layer.ln2 = make_ln(p + ".ln2");
    layer.ffn = make_ffn(p + ".ffn");
    enc_layers_.push_back(std::move(layer));
  }
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    DecoderLayer layer;
    layer.ln1 = make_ln(p + ".ln1");
    layer.self_attn = make_attn(p + ".self");
    layer.ln2 = make_ln(p + ".ln2");
    layer.cross_attn = make_attn(p + ".cross");
    layer.ln3 = make_ln(p + ".ln3");
    layer.ffn = make_ffn(p + ".ffn");
    dec_layers_.push_back(std::move(layer));
  }
  enc_final_ln_ = make_ln("enc_final_ln");
  dec_final_ln_ = make_ln("dec_final_ln");
  w_out_ = reg("w_out", randn(d, cfg_.vocab_size, rng, w_std));
  b_out_ = reg("b_out", Tensor(1, cfg_.vocab_size));
}

std::vector<NodePtr> Seq2SeqModel::params() const {
  std::vector<NodePtr> out;
  out.reserve(named_.size());
  for (const auto& [name, p] : named_) out.push_back(p);
  return out;
}

long Seq2SeqModel::param_count() const {
  long n = 0;
  for (const auto& [name, p] : named_) n += static_cast<long>(p->value.numel());
  return n;
}

NodePtr Seq2SeqModel::embed(const TokenSeq& ids, const NodePtr& pos_table) const {
  const int len = static_cast<int>(ids.size());
  if (len == 0) throw StageError("model: empty token sequence");
  if (len > cfg_.max_len) {
    throw StageError("model: sequence length " + std::to_string(len) + " exceeds max_len " +
                     std::to_string(cfg_.max_len));
  }
  for (int id : ids.ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw StageError("model: token id out of vocab range");
  }
  std::vector<int> positions(static_cast<size_t>(len));
  std::iota(positions.begin(), positions.end(), 0);
  return ad::add(ad::gather_rows(tok_emb_, ids.ids), ad::gather_rows(pos_table, positions));
}

NodePtr Seq2SeqModel::causal_mask(int n) const {
  Tensor m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) m.at(i, j) = static_cast<real_t>(-1e9);
  }
  return ad::constant(std::move(m));
}

NodePtr Seq2SeqModel::run_attention(const Attention& att, const NodePtr& x, const NodePtr& kv,
                                    const NodePtr& mask) const {
  std::vector<NodePtr> heads;
  heads.reserve(att.wq.size());
  for (size_t h = 0; h < att.wq.size(); ++h) {
    auto q = ad::matmul(x, att.wq[h]);
    auto k = ad::matmul(kv, att.wk[h]);
    auto v = ad::matmul(kv, att.wv[h]);
    auto scores = ad::attention_score(q, k);
    if (mask) scores = ad::add(scores, mask);
    heads.push_back(ad::matmul(ad::softmax_rows(scores), v));
  }
  return ad::matmul(ad::concat_cols(heads), att.wo);
}

NodePtr Seq2SeqModel::run_ffn(const FeedForward& ffn, const NodePtr& x) const {
  auto h = ad::relu(ad::add_rowvec(ad::matmul(x, ffn.w1), ffn.b1));
  return ad::add_rowvec(ad::matmul(h, ffn.w2), ffn.b2);
}

NodePtr Seq2SeqModel::encode(const TokenSeq& src) const {
  auto x = embed(src, enc_pos_);
  for (const auto& layer : enc_layers_) {
    auto normed = ad::layer_norm(x, layer.ln1.gamma, layer.ln1.beta);
    x = ad::add(x, run_attention(layer.self_attn, normed, normed, nullptr));
    x = ad::add(x, run_ffn(layer.ffn, ad::layer_norm(x, layer.ln2.gamma, layer.ln2.beta)));
  }
  return ad::layer_norm(x, enc_final_ln_.gamma, enc_final_ln_.beta);
}

NodePtr Seq2SeqModel::decode_logits(const NodePtr& enc_out, const TokenSeq& tgt_prefix) const {
  auto x = embed(tgt_prefix, dec_pos_);
  auto mask = causal_mask(static_cast<int>(tgt_prefix.size()));
  for (const auto& layer : dec_layers_) {
    auto normed = ad::layer_norm(x, layer.ln1.gamma, layer.ln1.beta);
    x = ad::add(x, run_attention(layer.self_attn, normed, normed, mask));
    auto normed2 = ad::layer_norm(x, layer.ln2.gamma, layer.ln2.beta);
    x = ad::add(x, run_attention(layer.cross_attn, normed2, enc_out, nullptr));
    x = ad::add(x, run_ffn(layer.ffn, ad::layer_norm(x, layer.ln3.gamma, layer.ln3.beta)));
  }
  x = ad::layer_norm(x, dec_final_ln_.gamma, dec_final_ln_.beta);
  return ad::add_rowvec(ad::matmul(x, w_out_), b_out_);
}

NodePtr Seq2SeqModel::logits(const TokenSeq& src, const TokenSeq& tgt_prefix) const {
  return decode_logits(encode(src), tgt_prefix);
}

NodePtr Seq2SeqModel::nll_from_encoding(const NodePtr& enc_out, const TokenSeq& tgt) const {
  if (tgt.empty()) throw StageError("sequence_nll: empty target");
  if (tgt.ids.back() != Vocab::kEos) throw StageError("sequence_nll: target must end with EOS");
  TokenSeq decoder_input;
  decoder_input.ids.push_back(Vocab::kBos);
  decoder_input.ids.insert(decoder_input.ids.end(), tgt.ids.begin(), tgt.ids.end() - 1);
  auto logp = ad::log_softmax_rows(decode_logits(enc_out, decoder_input));
  return ad::scale(ad::sum(ad::rows_pick(logp, tgt.ids)), -1);
}

NodePtr Seq2SeqModel::nll(const TokenSeq& src, const TokenSeq& tgt) const {
  return nll_from_encoding(encode(src), tgt);
}

int Seq2SeqModel::next_token_greedy(const Tensor& logits_row) const {
  int best = 0;
  for (int c = 1; c < logits_row.cols; ++c) {
    if (logits_row.at(0, c) > logits_row.at(0, best)) best = c;
  }
  return best;
}

TokenSeq Seq2SeqModel::greedy_decode(const TokenSeq& src, int max_len) const {
  if (max_len < 1) throw StageError("greedy_decode: max_len must be >= 1");
  ad::NoGradGuard ng;
  auto enc = encode(src);
  TokenSeq prefix;
  prefix.ids.push_back(Vocab::kBos);
  TokenSeq out;
  for (int step = 0; step < max_len; ++step) {
    auto lg = decode_logits(enc, prefix);
    auto last = ad::slice_rows(lg, lg->value.rows - 1, lg->value.rows);
    int tok = next_token_greedy(last->value);
    out.ids.push_back(tok);
    if (tok == Vocab::kEos) break;
    if (static_cast<int>(prefix.size()) >= cfg_.max_len) break;
    prefix.ids.push_back(tok);
  }
  return out;
}

TokenSeq Seq2SeqModel::sample_decode(const TokenSeq& src, int max_len, double temperature,
                                     std::uint64_t seed) const {
  if (max_len < 1) throw StageError("sample_decode: max_len must be >= 1");
  if (temperature < 0) throw StageError("sample_decode: negative temperature");
  ad::NoGradGuard ng;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto enc = encode(src);
  TokenSeq prefix;
  prefix.ids.push_back(Vocab::kBos);
  TokenSeq out;
  for (int step = 0; step < max_len; ++step) {
    auto lg = decode_logits(enc, prefix);
    auto last = ad::slice_rows(lg, lg->value.rows - 1, lg->value.rows);
    int tok;
    if (temperature < 1e-12) {
      tok = next_token_greedy(last->value);
    } else {
      const int v = last->value.cols;
      std::vector<double> probs(static_cast<size_t>(v));
      double mx = last->value.at(0, 0);
      for (int c = 1; c < v; ++c) mx = std::max(mx, static_cast<double>(last->value.at(0, c)));
      double denom = 0;
      for (int c = 0; c < v; ++c) {
        probs[static_cast<size_t>(c)] = std::exp((static_cast<double>(last->value.at(0, c)) - mx) / temperature);
        denom += probs[static_cast<size_t>(c)];
      }
      double u = unif(rng) * denom;
      tok = v - 1;
      double acc = 0;
      for (int c = 0; c < v; ++c) {
        acc += probs[static_cast<size_t>(c)];
        if (u <= acc) {
          tok = c;
          break;
        }
      }
    }
    out.ids.push_back(tok);
    if (tok == Vocab::kEos) break;
    if (static_cast<int>(prefix.size()) >= cfg_.max_len) break;
    prefix.ids.push_back(tok);
  }
  return out;
}

}  // namespace iag
