#pragma once
#include <functional>

#include "evstereo/rng.hpp"
#include "evstereo/tensor.hpp"

namespace evstereo {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// rel error with the shared denominator convention
inline double rel_err(double a, double b) {
  double denom = std::max(std::abs(a), std::max(std::abs(b), 1e-8));
  return std::abs(a - b) / denom;
}

// Central-difference check of an analytic gradient. f re-evaluates the scalar
// function from scratch at a perturbed x. Checks `samples` elements (all when
// samples <= 0 or >= numel; otherwise a random subset drawn from rng).
GradCheckResult finite_difference_check(const std::function<double(const Tensor&)>& f,
                                        const Tensor& x, const Tensor& analytic_grad, double step,
                                        int64_t samples = 0, DetRng* rng = nullptr);

}  // namespace evstereo
