#pragma once

// Central finite-difference gradient checks: the float32 engine's analytic
// gradients are compared against differences of the double-precision
// reference kernels at the same point.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wavesplit/rng.hpp"

namespace wavesplit::gradcheck {

struct FdConfig {
  double h = 1e-3;
  double rel_tol = 1e-3;
  double abs_tol = 1e-5;  // near-zero gradients fall back to absolute error
  int max_coords = 0;     // 0 = every coordinate
};

struct CheckResult {
  std::string name;
  int checked = 0;
  int failed = 0;
  double max_rel_err = 0.0;

  bool passed() const { return checked > 0 && failed == 0; }
};

// Compares `analytic` against central differences of `loss_at` (which reads
// `point`) coordinate by coordinate.
CheckResult fd_compare(const std::string& name, const std::vector<double>& analytic,
                       std::vector<double>& point, const std::function<double()>& loss_at,
                       const FdConfig& cfg, RngStream& rng);

// The tensor-engine and objective check suites on randomized small shapes.
std::vector<CheckResult> run_all(std::uint64_t seed);

bool all_passed(const std::vector<CheckResult>& results);
std::string format_table(const std::vector<CheckResult>& results);

}  // namespace wavesplit::gradcheck
