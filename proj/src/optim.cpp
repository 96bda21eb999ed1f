// SPDX-License-Identifier: Apache-2.0
#include "iag/optim.hpp"

#include <cmath>

namespace iag {

void zero_grad(const std::vector<ad::NodePtr>& params) {
  for (const auto& p : params) {
    p->ensure_grad();
    p->grad.fill(0);
  }
}

namespace {

void check_grad_finite(const ad::NodePtr& p) {
  if (!p->grad.same_shape(p->value)) {
    throw StageError("optimizer: parameter has no gradient");
  }
  if (!p->grad.all_finite()) {
    throw StageError("optimizer: non-finite gradient encountered");
  }
}

}  // namespace

void sgd_step(const std::vector<ad::NodePtr>& params, real_t lr) {
  for (const auto& p : params) {
    check_grad_finite(p);
    for (size_t i = 0; i < p->value.numel(); ++i) p->value.data[i] -= lr * p->grad.data[i];
  }
}

void adam_step(const std::vector<ad::NodePtr>& params, AdamState& state, real_t lr, real_t beta1,
               real_t beta2, real_t eps) {
  ++state.step;
  const real_t bc1 = 1 - std::pow(beta1, static_cast<real_t>(state.step));
  const real_t bc2 = 1 - std::pow(beta2, static_cast<real_t>(state.step));
  for (const auto& p : params) {
    check_grad_finite(p);
    auto& mom = state.moments[p.get()];
    if (!mom.m.same_shape(p->value)) {
      mom.m = Tensor(p->value.rows, p->value.cols);
      mom.v = Tensor(p->value.rows, p->value.cols);
    }
    for (size_t i = 0; i < p->value.numel(); ++i) {
      const real_t g = p->grad.data[i];
      mom.m.data[i] = beta1 * mom.m.data[i] + (1 - beta1) * g;
      mom.v.data[i] = beta2 * mom.v.data[i] + (1 - beta2) * g * g;
      const real_t mhat = mom.m.data[i] / bc1;
      const real_t vhat = mom.v.data[i] / bc2;
      p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace iag
