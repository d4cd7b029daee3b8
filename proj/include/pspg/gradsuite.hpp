#pragma once

// Seeded finite-difference checks over every trainable module, run at 64-bit
// precision. Used by the `gradcheck` subcommand and the acceptance suite.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace pspg {

struct GradcheckItem {
  std::string module;
  double max_rel_error = 0.0;  // worst over instances and parameters
  std::size_t instances = 0;
};

inline constexpr double kGradcheckTolerance = 1e-4;

std::vector<GradcheckItem> run_gradcheck_suite(std::size_t instances = 10, std::uint64_t seed = 0);

bool gradcheck_passed(const std::vector<GradcheckItem>& items);

}  // namespace pspg
