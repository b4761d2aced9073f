#pragma once

// Test-side helpers around the dense oracles: an objective written out term
// by term (independent of the library) and a random problem generator.

#include "csr/oracle.hpp"

namespace csr::oracle {

using csr::OracleSolution;
using csr::brute_force_oracle;
using csr::hard_constraint_oracle;

/// Objective written out term by term, ½-weighted as in the library.
double dense_objective(const InferenceProblem& problem, bool with_slack, const PlaneTensor& albedo_log,
                       const PlaneTensor& shading_log, const Rgb& light_log);

/// Random problem: means in [-2, 0], log-variances in [-2, 2], image near
/// the constraint surface plus noise.
InferenceProblem random_problem(std::uint64_t seed, int height, int width);

double max_abs_diff(const PlaneTensor& a, const PlaneTensor& b);

}  // namespace csr::oracle
