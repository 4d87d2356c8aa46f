#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace eac {

struct GradCheckCase {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t seeds = 0;
  bool passed = false;
};

// Every primitive plus both backbone variants, each over `seeds` random
// draws. `corrupt` names a case whose reverse-mode gradient is deliberately
// scaled (test hook); empty means none.
std::vector<GradCheckCase> run_gradcheck_suite(std::size_t seeds, double tolerance = 1e-4,
                                               const std::string& corrupt = {});

std::vector<std::string> gradcheck_case_names();

}  // namespace eac
