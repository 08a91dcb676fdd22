#include "sdscl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sdscl/errors.hpp"

namespace sdscl {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  Tensor y = f();
  if (!y.defined() || y.numel() != 1) throw EvaluationError("grad_check: function is not scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw EvaluationError("grad_check: function returned a non-finite value");
  return v;
}

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= n) return idx;
  // Partial Fisher-Yates for a deterministic subset.
  for (std::size_t i = 0; i < limit; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double relative_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  for (auto& in : inputs) {
    if (!in.requires_grad()) throw ArgumentError("grad_check: every input must require grad");
    in.zero_grad();
  }
  Tensor y = f();
  if (!y.defined() || y.numel() != 1) throw EvaluationError("grad_check: function is not scalar-valued");
  if (!std::isfinite(y.item())) throw EvaluationError("grad_check: function returned a non-finite value");
  backward(y);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    std::vector<double> g(in.numel(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.sample_seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    for (std::size_t i : pick_indices(values.size(), options.max_elements_per_input, rng)) {
      const double original = values[i];
      auto central = [&](double h) {
        values[i] = original + h;
        const double plus = evaluate(f);
        values[i] = original - h;
        const double minus = evaluate(f);
        values[i] = original;
        return (plus - minus) / (2.0 * h);
      };
      GradCheckEntry e;
      e.input = k;
      e.index = i;
      e.analytic = analytic[k][i] * options.corrupt_factor;
      e.numeric = central(options.step);
      e.rel_error = relative_error(e.analytic, e.numeric, options.abs_floor);
      if (options.refine_failures && e.rel_error > options.tolerance) {
        const double d2 = central(options.step / 2.0), d4 = central(options.step / 4.0);
        const double coarse = (4.0 * d2 - e.numeric) / 3.0, fine = (4.0 * d4 - d2) / 3.0;
        if (relative_error(coarse, fine, options.abs_floor) > options.tolerance) {
          e.skipped = true;
        } else {
          e.numeric = fine;
          e.rel_error = relative_error(e.analytic, e.numeric, options.abs_floor);
        }
      }
      if (e.skipped) {
        ++report.skipped;
      } else {
        report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      }
      report.entries.push_back(e);
    }
  }
  report.passed = report.max_rel_error <= options.tolerance &&
                  static_cast<double>(report.skipped) <=
                      options.max_skip_fraction * static_cast<double>(report.entries.size());
  return report;
}

}  // namespace sdscl
