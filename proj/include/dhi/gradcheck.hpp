#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dhi/tensor.hpp"

namespace dhi {

struct GradCheckOptions {
  double step = 1e-5;        // central difference step
  double tolerance = 1e-4;   // on the norm-wise relative error
  std::size_t seeds = 5;
  std::uint64_t base_seed = 0;
  bool inject_fault = false;  // adds a case whose backward is wrong on purpose
  // A coordinate that misses at `step` is re-measured at step/10, step/100,
  // ...; it counts when the error keeps shrinking and ends within
  // tolerance. More than a tenth of coordinates refined fails the case.
  std::size_t refinements = 2;
};

struct GradCheckResult {
  std::string op;
  std::uint64_t seed = 0;
  double rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar inputs compared
  std::size_t refined = 0;  // coordinates that needed a smaller step
  bool passed = false;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares the tape gradient of fn with respect to every element of inputs
// against central differences. Error is ||analytic - numeric|| /
// max(||analytic||, ||numeric||, 1e-12).
GradCheckResult check_gradient(const std::string& op, std::uint64_t seed, const std::vector<Tensor>& inputs,
                               const ScalarFn& fn, const GradCheckOptions& options);

// Every differentiable op of the library, options.seeds seeds each.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options);

std::vector<std::string> gradient_suite_ops(bool inject_fault = false);

}  // namespace dhi
