#pragma once

#include "csr/net.hpp"
#include "csr/tensor.hpp"

namespace csr {

enum class NoiseFamily { gaussian, laplace };

const char* to_string(NoiseFamily family);
NoiseFamily parse_noise_family(const std::string& name);

/// Summed negative log-likelihood and its gradients with respect to the
/// mean (or residual) map and the log-variance map.
struct NllTerm {
  double value = 0.0;
  PlaneTensor grad_mean;
  PlaneTensor grad_log_var;
};

/// 0.5 * sum[(mu - y)^2 exp(-u) + u + log 2pi], u = log sigma^2.
/// `log_var` either matches `mean` or is single-channel and shared by all
/// channels of a pixel; its gradient is summed over the channels it serves.
NllTerm gaussian_nll(const PlaneTensor& mean, const PlaneTensor& log_var, const PlaneTensor& target);

/// sum[|mu - y| exp(-b) + b + log 2], b = log of the Laplace scale.
/// The location subgradient at a zero residual is 0.
NllTerm laplace_nll(const PlaneTensor& mean, const PlaneTensor& log_var, const PlaneTensor& target);

/// Zero-mean NLL of a constraint residual; `grad_mean` is d/d(residual).
NllTerm constraint_nll(const PlaneTensor& residual, const PlaneTensor& log_var, NoiseFamily family);

struct ShiftResult {
  double alpha = 0.0;
  PlaneTensor shifted;
};

/// Scalar alpha minimizing ||alpha + pred - target||^2 + beta * alpha^2,
/// i.e. alpha = sum(target - pred) / (N + beta).
ShiftResult optimal_shift(const PlaneTensor& pred, const PlaneTensor& target, double beta);

/// Where the constraint residual used to train sigma_G comes from.
enum class ResidualSource { ground_truth, predicted };

const char* to_string(ResidualSource source);
ResidualSource parse_residual_source(const std::string& name);

struct LossOptions {
  double lambda_reg = 1e-3;
  NoiseFamily family = NoiseFamily::gaussian;
  double beta = 0.5;
  ResidualSource residual_source = ResidualSource::ground_truth;
  /// Give the constraint residual its own per-channel shift, which absorbs
  /// the (unsupervised) global light color.
  bool shift_constraint = true;
};

/// Log-domain supervision for one image.
struct IntrinsicTargets {
  PlaneTensor albedo_log;   // 3 channels
  PlaneTensor shading_log;  // 1 channel (gray shading)
};

struct LossEvaluation {
  double value = 0.0;
  HeadBundle grads;
  double alpha_albedo = 0.0;
  double alpha_shading = 0.0;
};

/// Output NLLs for albedo and shading (after their optimal shifts), the
/// constraint NLL, and lambda * sum(u^2) over the three log-variance maps.
/// Gradients are exact, including the dependence of each shift on the
/// predictions.
LossEvaluation total_training_loss(const HeadBundle& heads, const IntrinsicTargets& targets,
                                   const PlaneTensor& image_log, const LossOptions& options);

/// Plain Euclidean loss on the shifted albedo and shading means; the
/// variance heads receive zero gradient.
LossEvaluation l2_training_loss(const HeadBundle& heads, const IntrinsicTargets& targets,
                                double beta);

}  // namespace csr
