#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "cgiqa/tensor.hpp"

namespace cgiqa {

// A scalar function of several tensors. When `grads` is non-null the callee
// must fill it with one analytic gradient per input (same shapes).
using ScalarFn =
    std::function<double(const std::vector<Tensor>& inputs, std::vector<Tensor>* grads)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Entries with max(|analytic|, |numeric|) below this are compared absolutely.
  double magnitude_floor = 1e-4;
  // 0 checks every entry; otherwise an evenly strided subset per input.
  std::size_t max_entries_per_input = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

// Compares analytic gradients against central differences. The relative
// error of one entry is |a - n| / max(|a|, |n|, magnitude_floor).
GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace cgiqa
