#pragma once

#include "csr/inference.hpp"

namespace csr {

// Dense reference solvers for the full-image problem. They build the whole
// quadratic in (A, B, C) at once, so they are only meant for small images.

struct OracleSolution {
  PlaneTensor albedo_log;
  PlaneTensor shading_log;
  Rgb light_log{};
  double objective = 0.0;  // inference_objective at the solution
};

/// Soft problem over all 4N + 3 unknowns, as one weighted least-squares
/// system solved by column-pivoted QR.
OracleSolution brute_force_oracle(const InferenceProblem& problem);

/// Hard problem: A = I - B - C substituted, the remaining N + 3 unknowns
/// solved densely.
OracleSolution hard_constraint_oracle(const InferenceProblem& problem);

}  // namespace csr
