#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voxreg/tensor.hpp"

namespace voxreg {

/// One finite-difference comparison: the analytic gradient of `loss` with
/// respect to every parameter element against central differences.
struct GradCheckCase {
  std::string name;
  std::vector<Tensor> params;
  // Scalar loss as a function of the (possibly perturbed) parameters; must
  // evaluate the same computation the tape differentiates.
  std::function<Tensor(std::vector<Tensor>&)> loss;
  // Elements sampled per parameter; <=0 checks all of them.
  Index samples_per_param = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  Index checked = 0;
  bool pass = false;
};

/// Central differences with step h on each sampled element. An element
/// passes when |ad - fd| <= abs_floor or the relative error is below tol.
GradCheckResult run_gradcheck_case(const GradCheckCase& c, double h = 1e-5,
                                   double tol = 1e-4,
                                   double abs_floor = 1e-8);

/// Named suites: "tensor", "sga", "ssa", "network", "losses" or "all".
std::vector<GradCheckCase> make_gradcheck_suite(const std::string& module,
                                                std::uint64_t seed);

/// Runs a suite and returns per-case results (pass flag per case).
std::vector<GradCheckResult> run_gradcheck(const std::string& module,
                                           std::uint64_t seed);

}  // namespace voxreg
