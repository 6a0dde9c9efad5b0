#include "evstereo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "evstereo/errors.hpp"

namespace evstereo {

GradCheckResult finite_difference_check(const std::function<double(const Tensor&)>& f,
                                        const Tensor& x, const Tensor& analytic_grad, double step,
                                        int64_t samples, DetRng* rng) {
  contract(step > 0.0, "finite_difference_check: step must be positive");
  contract(analytic_grad.same_shape(x), "finite_difference_check: gradient shape mismatch");

  std::vector<int64_t> picks;
  if (samples <= 0 || samples >= x.numel() || rng == nullptr) {
    picks.resize(size_t(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) picks[size_t(i)] = i;
  } else {
    std::set<int64_t> s;
    while (int64_t(s.size()) < samples) s.insert(rng->uniform_int(x.numel()));
    picks.assign(s.begin(), s.end());
  }

  GradCheckResult res;
  Tensor probe = x;
  for (int64_t i : picks) {
    double orig = probe[i];
    probe[i] = orig + step;
    double fp = f(probe);
    probe[i] = orig - step;
    double fm = f(probe);
    probe[i] = orig;
    double numeric = (fp - fm) / (2.0 * step);
    double e = rel_err(analytic_grad[i], numeric);
    if (e > res.max_rel_err) {
      res.max_rel_err = e;
      res.worst_index = i;
      res.analytic_at_worst = analytic_grad[i];
      res.numeric_at_worst = numeric;
    }
  }
  return res;
}

}  // namespace evstereo
