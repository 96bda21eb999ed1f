// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "iag/seq2seq.hpp"

namespace iag {

// A beam hypothesis: generated tokens (BOS excluded, EOS included when
// finished) and the accumulated sum of chosen-token log-probabilities.
struct Hypothesis {
  TokenSeq tokens;
  double score = 0.0;
  bool finished = false;
};

// Same search result, but the score is a live graph node so the sequence
// log-probability can carry gradients back into the model. Top-k selection is
// made on detached values; gradients flow only through the chosen entries.
struct DiffHypothesis {
  TokenSeq tokens;
  ad::NodePtr score_node;
  bool finished = false;
};

// Standard beam search, no length penalty, ties broken by token-id
// lexicographic order. Finished beams are frozen and carried forward.
std::vector<Hypothesis> beam_search(const Seq2SeqModel& model, const TokenSeq& src, int beam_width,
                                    int max_len);

// Graph-preserving variant; agrees with beam_search on tokens, order and
// scores for identical inputs.
std::vector<DiffHypothesis> differentiable_beam_search(const Seq2SeqModel& model,
                                                       const TokenSeq& src, int beam_width,
                                                       int max_len);

}  // namespace iag
