#pragma once

#include <array>
#include <string>
#include <vector>

#include "csr/losses.hpp"
#include "csr/net.hpp"
#include "csr/tensor.hpp"

namespace csr {

using Rgb = std::array<double, 3>;

/// One pixel of the constrained MAP problem, log domain:
///   sum_c (A_c - muA_c)^2 / 2vA + (B - muB)^2 / 2vB
///     + sum_c (A_c + B + C_c - I_c)^2 / 2vG
struct PixelProblem {
  Rgb mu_albedo{};
  double mu_shading = 0.0;
  double var_albedo = 1.0;
  double var_shading = 1.0;
  double var_constraint = 1.0;
  Rgb image_log{};
  Rgb light_log{};
};

struct PixelSolution {
  Rgb albedo_log{};
  double shading_log = 0.0;
};

/// Exact minimizer of the soft (slack-penalized) pixel objective. The
/// albedo block is eliminated first, which keeps the solve accurate for
/// any positive variances, including var_constraint -> 0.
PixelSolution solve_pixel_soft(const PixelProblem& p);

/// Minimizer of the variance-weighted deviation subject to
/// A_c + B + C_c = I_c exactly; var_constraint is ignored.
PixelSolution solve_pixel_hard(const PixelProblem& p);

/// Per channel, the weighted mean of I - A - B with weights 1/var.
Rgb solve_global_color(const PlaneTensor& albedo_log, const PlaneTensor& shading_log,
                       const PlaneTensor& image_log, const PlaneTensor& var);

enum class InferenceMode { soft, hard };

/// Block order is always C, then B, then A. `coupled` moves each block
/// together with the exact linear response of the blocks it is tied to
/// (still an exact minimization along that subspace, so every step is
/// monotone); `plain` freezes the other blocks and converges slowly when the
/// constraint variance is small.
enum class AlternationSchedule { coupled, plain };

/// Full-image problem: per-pixel means, variances (not log), and the image.
struct InferenceProblem {
  PlaneTensor albedo_mean;     // HxWx3
  PlaneTensor shading_mean;    // HxWx1
  PlaneTensor var_albedo;      // HxWx1
  PlaneTensor var_shading;     // HxWx1
  PlaneTensor var_constraint;  // HxWx1
  PlaneTensor image_log;       // HxWx3

  /// Variances from the log-variance heads. For a Laplace constraint head
  /// the Gaussian of equal variance (2 * scale^2) is used. With
  /// `unit_output_variances` the albedo/shading variances are fixed to 1.
  static InferenceProblem from_heads(const HeadBundle& heads, const PlaneTensor& image_log,
                                     NoiseFamily constraint_family = NoiseFamily::gaussian,
                                     bool unit_output_variances = false);
  void validate(InferenceMode mode) const;
};

struct AlternationOptions {
  InferenceMode mode = InferenceMode::soft;
  int max_sweeps = 50;
  double tolerance = 1e-10;
  AlternationSchedule schedule = AlternationSchedule::coupled;
};

struct DecompositionResult {
  PlaneTensor albedo_log;
  PlaneTensor shading_log;
  Rgb light_log{};
  PlaneTensor slack;  // A + B + C - I
  /// Objective at initialization and after every sweep.
  std::vector<double> objective_trace;
  /// Objective at initialization and after every individual block step.
  std::vector<double> step_trace;
  int sweeps = 0;
};

DecompositionResult alternating_decompose(const InferenceProblem& problem,
                                          const AlternationOptions& options);
DecompositionResult alternating_decompose(const HeadBundle& heads, const PlaneTensor& image_log,
                                          InferenceMode mode, int sweeps);

/// Objective value at (A, B, C), constants dropped. Hard mode drops the slack
/// term (the iterate is feasible by construction).
double inference_objective(const InferenceProblem& problem, InferenceMode mode,
                           const PlaneTensor& albedo_log, const PlaneTensor& shading_log,
                           const Rgb& light_log);

PlaneTensor slack_map(const PlaneTensor& albedo_log, const PlaneTensor& shading_log,
                      const Rgb& light_log, const PlaneTensor& image_log);

const char* to_string(InferenceMode mode);

}  // namespace csr
