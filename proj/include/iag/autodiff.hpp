// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "iag/tensor.hpp"

namespace iag {
namespace ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the reverse-mode graph. Values are checked finite after every
// forward op. Leaf gradients accumulate across backward calls; interior
// gradients reflect the most recent call.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  real_t scalar() const;
  void ensure_grad();
};

// While a guard is alive, ops compute values but record no graph. Used for
// frozen-model inference (decoding, evaluation, generator feedback).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

NodePtr constant(Tensor value);
NodePtr param(Tensor value);
// Constant copy of another node's current value (the stop-gradient operator).
NodePtr detach(const NodePtr& a);

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr add_rowvec(const NodePtr& a, const NodePtr& b);  // b is 1 x cols
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, real_t c);
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr matmul_nt(const NodePtr& a, const NodePtr& b);  // a * b^T
// q * k^T / sqrt(cols), the scaled dot-product attention score.
NodePtr attention_score(const NodePtr& q, const NodePtr& k);
NodePtr softmax_rows(const NodePtr& a);
NodePtr log_softmax_rows(const NodePtr& a);
NodePtr log(const NodePtr& a);  // errors on non-positive input
NodePtr exp(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                   real_t eps = 1e-5);
NodePtr gather_rows(const NodePtr& table, const std::vector<int>& ids);
NodePtr rows_pick(const NodePtr& a, const std::vector<int>& ids);  // -> [n x 1]
NodePtr pick(const NodePtr& a, int r, int c);                      // -> [1 x 1]
NodePtr slice_rows(const NodePtr& a, int r0, int r1);              // [r0, r1)
NodePtr concat_rows(const std::vector<NodePtr>& parts);
NodePtr concat_cols(const std::vector<NodePtr>& parts);
NodePtr sum(const NodePtr& a);  // -> [1 x 1]

// Reverse-mode accumulation from a scalar root into every reachable
// gradient-requiring node. Repeated calls without zeroing accumulate on leaves.
void backward(const NodePtr& root);

}  // namespace ad
}  // namespace iag
