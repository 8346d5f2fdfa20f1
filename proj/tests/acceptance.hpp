// Interface between the float acceptance driver and the double-precision
// gradient checks; deliberately free of Real so both builds can include it.
#pragma once

#include <string>

struct GradientSuiteResult {
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst_error = 0;
  std::string worst_case;
  double seconds = 0;
  bool all_ops_covered = false;
};

/// Runs every op and composite finite-difference case against `tolerance`.
GradientSuiteResult run_gradient_suite(double tolerance);
