// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <vector>

#include "iag/autodiff.hpp"

namespace iag {

void zero_grad(const std::vector<ad::NodePtr>& params);

// Plain SGD over the gradients stored on the parameter nodes.
// Non-finite gradients abort rather than being clipped.
void sgd_step(const std::vector<ad::NodePtr>& params, real_t lr);

struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
  };
  std::map<ad::Node*, Moments> moments;
  long step = 0;
};

void adam_step(const std::vector<ad::NodePtr>& params, AdamState& state, real_t lr,
               real_t beta1 = 0.9, real_t beta2 = 0.999, real_t eps = 1e-8);

// Linear warmup to the base rate; constant afterwards.
inline real_t warmup_lr(real_t base_lr, long step, long warmup_steps) {
  if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
  return base_lr * static_cast<real_t>(step + 1) / static_cast<real_t>(warmup_steps);
}

}  // namespace iag
