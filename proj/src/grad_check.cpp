#include "cgiqa/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "cgiqa/error.hpp"

namespace cgiqa {

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  fn(inputs, &analytic);
  if (analytic.size() != inputs.size()) {
    throw DimensionError("grad_check: closure returned " + std::to_string(analytic.size()) +
                         " gradients for " + std::to_string(inputs.size()) + " inputs");
  }
  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    require_same_shape(inputs[t], analytic[t], "grad_check");
    const std::size_t n = inputs[t].size();
    std::size_t stride = 1;
    if (options.max_entries_per_input > 0 && n > options.max_entries_per_input) {
      stride = (n + options.max_entries_per_input - 1) / options.max_entries_per_input;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = inputs[t][i];
      inputs[t][i] = original + options.step;
      const double plus = fn(inputs, nullptr);
      inputs[t][i] = original - options.step;
      const double minus = fn(inputs, nullptr);
      inputs[t][i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      report.max_relative_error = std::max(report.max_relative_error, abs_err / denom);
      ++report.entries_checked;
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace cgiqa
