#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "timemae/tensor.hpp"

TIMEMAE_BEGIN_NAMESPACE

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;  // which tensor in `inputs`
  std::size_t worst_index = 0;  // flat coordinate within it
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backward() against central differences for every coordinate of
/// every tensor in `inputs`. `f` must rebuild the scalar from the current
/// values of those tensors; it is evaluated twice up front and must agree
/// bitwise, otherwise OracleInvalidError is thrown.
///
/// Error per coordinate: |analytic - numeric| / (|numeric| + 1e-8).
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  double eps);

/// Single-input convenience form.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps);

TIMEMAE_END_NAMESPACE
