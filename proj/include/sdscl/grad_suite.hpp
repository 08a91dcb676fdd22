#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdscl/grad_check.hpp"

namespace sdscl {

enum class CheckScope { ops, siia, losses, end2end };

CheckScope check_scope_from_string(const std::string& name);
std::string to_string(CheckScope scope);

/// Extents of the random instances: batch, channels, frames, joints, heads.
struct CheckExtents {
  std::size_t batch = 2, channels = 8, frames = 6, joints = 5, heads = 2;
};

/// A scalar function and the leaves it is differentiated against. The function
/// owns whatever model state it closes over.
struct GradientCase {
  std::string name;
  std::function<Tensor()> f;
  std::vector<Tensor> inputs;
};

/// Every case of `scope`, built from random values drawn with `seed`.
std::vector<GradientCase> gradient_cases(CheckScope scope, std::uint64_t seed, const CheckExtents& extents = {});

struct GradientOutcome {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Defaults for the suite: failure refinement on, and a per-input sample cap on the
/// scopes with many parameters so 20 seeds stay within a couple of minutes.
GradCheckOptions suite_options(CheckScope scope);

std::vector<GradientOutcome> run_gradient_cases(CheckScope scope, std::uint64_t seed,
                                                const GradCheckOptions& options,
                                                const CheckExtents& extents = {});

}  // namespace sdscl
