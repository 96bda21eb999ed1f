// SPDX-License-Identifier: Apache-2.0
#include "iag/beam.hpp"

#include <algorithm>
#include <cmath>

namespace iag {

namespace {

void check_args(const Seq2SeqModel& model, int beam_width, int max_len) {
  if (beam_width < 1) throw StageError("beam_search: beam_width must be >= 1");
  if (beam_width > model.config().vocab_size) {
    throw StageError("beam_search: beam_width exceeds vocab size");
  }
  if (max_len < 1) throw StageError("beam_search: max_len must be >= 1");
}

bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

struct Candidate {
  int parent = -1;        // -1 = carried terminal beam
  int token = -1;
  double score = 0.0;
  std::vector<int> tokens;
  bool finished = false;
};

void select_top(std::vector<Candidate>& cands, int beam_width) {
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return lex_less(a.tokens, b.tokens);
  });
  if (static_cast<int>(cands.size()) > beam_width) {
    cands.resize(static_cast<size_t>(beam_width));
  }
}

TokenSeq with_bos(const std::vector<int>& tokens) {
  TokenSeq t;
  t.ids.reserve(tokens.size() + 1);
  t.ids.push_back(Vocab::kBos);
  t.ids.insert(t.ids.end(), tokens.begin(), tokens.end());
  return t;
}

}  // namespace

std::vector<Hypothesis> beam_search(const Seq2SeqModel& model, const TokenSeq& src, int beam_width,
                                    int max_len) {
  check_args(model, beam_width, max_len);
  ad::NoGradGuard ng;
  auto enc = model.encode(src);
  const int vocab = model.config().vocab_size;

  struct Beam {
    std::vector<int> tokens;
    double score = 0.0;
    bool finished = false;
  };
  std::vector<Beam> beams{Beam{}};

  for (int step = 0; step < max_len; ++step) {
    bool any_expandable = false;
    for (const auto& b : beams) any_expandable = any_expandable || !b.finished;
    if (!any_expandable) break;

    std::vector<Candidate> cands;
    for (size_t bi = 0; bi < beams.size(); ++bi) {
      const auto& b = beams[bi];
      if (b.finished) {
        Candidate c;
        c.score = b.score;
        c.tokens = b.tokens;
        c.finished = true;
        cands.push_back(std::move(c));
        continue;
      }
      auto logits = model.decode_logits(enc, with_bos(b.tokens));
      auto logp = ad::log_softmax_rows(ad::slice_rows(logits, logits->value.rows - 1, logits->value.rows));
      for (int tok = 0; tok < vocab; ++tok) {
        Candidate c;
        c.parent = static_cast<int>(bi);
        c.token = tok;
        c.score = b.score + static_cast<double>(logp->value.at(0, tok));
        c.tokens = b.tokens;
        c.tokens.push_back(tok);
        c.finished = tok == Vocab::kEos;
        cands.push_back(std::move(c));
      }
    }
    select_top(cands, beam_width);
    std::vector<Beam> next;
    next.reserve(cands.size());
    for (auto& c : cands) next.push_back({std::move(c.tokens), c.score, c.finished});
    beams = std::move(next);
  }

  std::vector<Hypothesis> out;
  out.reserve(beams.size());
  for (auto& b : beams) {
    Hypothesis h;
    h.tokens.ids = std::move(b.tokens);
    h.score = b.score;
    h.finished = b.finished;
    out.push_back(std::move(h));
  }
  return out;
}

std::vector<DiffHypothesis> differentiable_beam_search(const Seq2SeqModel& model,
                                                       const TokenSeq& src, int beam_width,
                                                       int max_len) {
  check_args(model, beam_width, max_len);
  auto enc = model.encode(src);
  const int vocab = model.config().vocab_size;

  struct Beam {
    std::vector<int> tokens;
    double score = 0.0;       // detached value used for selection
    ad::NodePtr score_node;   // same quantity in the graph
    bool finished = false;
  };
  std::vector<Beam> beams{Beam{{}, 0.0, ad::constant(Tensor::scalar(0)), false}};

  for (int step = 0; step < max_len; ++step) {
    bool any_expandable = false;
    for (const auto& b : beams) any_expandable = any_expandable || !b.finished;
    if (!any_expandable) break;

    std::vector<Candidate> cands;
    std::vector<ad::NodePtr> logp_of_beam(beams.size());
    for (size_t bi = 0; bi < beams.size(); ++bi) {
      const auto& b = beams[bi];
      if (b.finished) {
        Candidate c;
        c.parent = static_cast<int>(bi);
        c.score = b.score;
        c.tokens = b.tokens;
        c.finished = true;
        cands.push_back(std::move(c));
        continue;
      }
      auto logits = model.decode_logits(enc, with_bos(b.tokens));
      auto logp = ad::log_softmax_rows(ad::slice_rows(logits, logits->value.rows - 1, logits->value.rows));
      logp_of_beam[bi] = logp;
      for (int tok = 0; tok < vocab; ++tok) {
        Candidate c;
        c.parent = static_cast<int>(bi);
        c.token = tok;
        c.score = b.score + static_cast<double>(logp->value.at(0, tok));
        c.tokens = b.tokens;
        c.tokens.push_back(tok);
        c.finished = tok == Vocab::kEos;
        cands.push_back(std::move(c));
      }
    }
    select_top(cands, beam_width);
    // Graph nodes are built only for the selected continuations.
    std::vector<Beam> next;
    next.reserve(cands.size());
    for (auto& c : cands) {
      const auto& parent = beams[static_cast<size_t>(c.parent)];
      Beam nb;
      nb.tokens = std::move(c.tokens);
      nb.score = c.score;
      nb.finished = c.finished;
      if (c.token < 0) {
        nb.score_node = parent.score_node;  // carried terminal beam
      } else {
        nb.score_node =
            ad::add(parent.score_node, ad::pick(logp_of_beam[static_cast<size_t>(c.parent)], 0, c.token));
      }
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }

  std::vector<DiffHypothesis> out;
  out.reserve(beams.size());
  for (auto& b : beams) {
    DiffHypothesis h;
    h.tokens.ids = std::move(b.tokens);
    h.score_node = std::move(b.score_node);
    h.finished = b.finished;
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace iag
