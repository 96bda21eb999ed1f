// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace iag::accept {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Runs the acceptance criteria (1-10; empty list = all) with scratch artifacts
// under work_dir, printing one pass/fail line per criterion.
std::vector<CriterionResult> run(const std::vector<int>& criteria, const std::string& work_dir);

bool all_passed(const std::vector<CriterionResult>& results);

}  // namespace iag::accept
