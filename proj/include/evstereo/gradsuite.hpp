#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evstereo {

struct GradCase {
  std::string name;
  double rel_err = 0.0;
  bool ok = false;
};

struct GradReport {
  std::vector<GradCase> cases;
  bool all_ok = true;

  const GradCase& worst() const;
};

// Central-difference sweep over every tape primitive and over scalar
// readouts through each model stage and loss term. Deterministic for a
// fixed seed. fault_op (a tape op name) scales that op's backward pass on
// the analytic side, which a healthy harness must flag; empty means no
// fault. Throws ContractError on an unknown op name.
GradReport run_gradient_suite(uint64_t seed, double tolerance = 1e-5,
                              const std::string& fault_op = "", double fault_scale = 1.0);

}  // namespace evstereo
