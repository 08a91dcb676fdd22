#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sdscl/tensor.hpp"

namespace sdscl {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Denominator floor of the relative error: |a - n| / max(|a|, |n|, floor).
  /// Keeps entries whose true gradient is ~0 from turning round-off into failures.
  double abs_floor = 1e-2;
  /// Check at most this many elements per input (0 = all), sampled deterministically.
  std::size_t max_elements_per_input = 0;
  std::uint64_t sample_seed = 0;
  /// Multiplies analytic gradients before comparison; a value != 1 is a negative control.
  double corrupt_factor = 1.0;
  /// On a failing entry, re-estimate with step/2 and step/4 and Richardson-extrapolate
  /// both pairs. If the two extrapolations agree within `tolerance` the function is
  /// smooth there and the extrapolated value replaces the plain estimate (this removes
  /// the step^2 truncation term that dominates at low temperatures). If they disagree
  /// the step straddles a kink (leaky ReLU, max) and the entry is skipped. More than
  /// `max_skip_fraction` skipped entries fails the check.
  bool refine_failures = false;
  double max_skip_fraction = 0.05;
};

struct GradCheckEntry {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool skipped = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;  ///< over compared (non-skipped) entries
  std::size_t skipped = 0;
  bool passed = true;
};

/// Compares backward() gradients of a scalar function against central differences.
///
/// `f` must rebuild its graph from the current values of `inputs` on each call;
/// inputs are perturbed in place and restored afterwards. Throws EvaluationError
/// if `f` yields a non-finite or non-scalar value.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double abs_floor);

}  // namespace sdscl
