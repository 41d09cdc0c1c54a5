#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dreid {

struct GradSuiteEntry {
  std::string op;
  double max_rel_err;
  bool finite;
  int kink_skipped;       // probe entries that straddled a kink
  std::int64_t entries;   // probe entries checked
};

// Central finite-difference checks (eps = 1e-5) for every differentiable
// operation, on small randomized shapes; the full forward pass runs on a
// micro backbone so every parameter entry is probed.
std::vector<GradSuiteEntry> gradient_suite(std::uint64_t seed);

}  // namespace dreid
