// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace iag {

struct TrainConfig {
  long epochs = 1;
  long iters = 0;  // iteration-driven loops (tailback) use this instead of epochs
  double lr = 3e-4;
  long warmup_steps = 100;
  long batch_size = 1;
  std::uint64_t seed = 1;
};

struct TrainStats {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  // (step or epoch, metric) pairs emitted at evaluation points
  std::vector<std::pair<long, double>> eval_points;
};

}  // namespace iag
