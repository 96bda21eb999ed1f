// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite runner: executes every criterion (or --criterion N) and
// prints one pass/fail line each. Exit code 0 only when everything passed.

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "iag/accept.hpp"

int main(int argc, char** argv) {
  std::vector<int> criteria;
  std::string work_dir = "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      criteria.push_back(std::atoi(argv[++i]));
    } else if (std::strcmp(argv[i], "--work-dir") == 0 && i + 1 < argc) {
      work_dir = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]... [--work-dir DIR]\n", argv[0]);
      return 2;
    }
  }
  auto results = iag::accept::run(criteria, work_dir);
  if (results.empty()) {
    std::fprintf(stderr, "no criteria selected\n");
    return 2;
  }
  return iag::accept::all_passed(results) ? 0 : 1;
}
