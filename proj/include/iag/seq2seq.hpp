// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "iag/autodiff.hpp"
#include "iag/vocab.hpp"

namespace iag {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 2;  // encoder and decoder depth
  int n_heads = 4;
  int d_ff = 0;  // 0 = 4 * d_model
  int max_len = 64;

  int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  void validate() const;
};

// Transformer encoder-decoder with pre-norm blocks, learned positional
// embeddings and per-head projection matrices. Used both for the student
// inductor and the answer generator.
class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, ad::NodePtr>>& named_params() const { return named_; }
  std::vector<ad::NodePtr> params() const;
  long param_count() const;

  // [len(src) x d_model] hidden states; positions restart at 0, which is what
  // makes multi-segment fusion order-independent.
  ad::NodePtr encode(const TokenSeq& src) const;

  // Causal decoding against an (possibly fused) encoder output. Row t scores
  // the token following tgt_prefix[0..t].
  ad::NodePtr decode_logits(const ad::NodePtr& enc_out, const TokenSeq& tgt_prefix) const;

  ad::NodePtr logits(const TokenSeq& src, const TokenSeq& tgt_prefix) const;

  // Sum of next-token negative log-likelihoods of tgt (which must end in EOS),
  // decoded from BOS. No length normalization.
  ad::NodePtr nll(const TokenSeq& src, const TokenSeq& tgt) const;
  ad::NodePtr nll_from_encoding(const ad::NodePtr& enc_out, const TokenSeq& tgt) const;

  TokenSeq greedy_decode(const TokenSeq& src, int max_len) const;
  TokenSeq sample_decode(const TokenSeq& src, int max_len, double temperature,
                         std::uint64_t seed) const;

 private:
  friend class Checkpoint;

  struct Attention {
    std::vector<ad::NodePtr> wq, wk, wv;  // one [d x d_head] per head
    ad::NodePtr wo;                       // [d x d]
  };
  struct LayerNormParams {
    ad::NodePtr gamma, beta;
  };
  struct FeedForward {
    ad::NodePtr w1, b1, w2, b2;
  };
  struct EncoderLayer {
    LayerNormParams ln1, ln2;
    Attention self_attn;
    FeedForward ffn;
  };
  struct DecoderLayer {
    LayerNormParams ln1, ln2, ln3;
    Attention self_attn, cross_attn;
    FeedForward ffn;
  };

  ad::NodePtr embed(const TokenSeq& ids, const ad::NodePtr& pos_table) const;
  ad::NodePtr run_attention(const Attention& att, const ad::NodePtr& x, const ad::NodePtr& kv,
                            const ad::NodePtr& mask) const;
  ad::NodePtr run_ffn(const FeedForward& ffn, const ad::NodePtr& x) const;
  ad::NodePtr causal_mask(int n) const;
  int next_token_greedy(const Tensor& logits_row) const;

  ModelConfig cfg_;
  ad::NodePtr tok_emb_, enc_pos_, dec_pos_;
  std::vector<EncoderLayer> enc_layers_;
  std::vector<DecoderLayer> dec_layers_;
  LayerNormParams enc_final_ln_, dec_final_ln_;
  ad::NodePtr w_out_, b_out_;
  std::vector<std::pair<std::string, ad::NodePtr>> named_;
};

}  // namespace iag
