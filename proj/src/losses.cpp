#include "csr/losses.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace csr {

const char* to_string(NoiseFamily family) {
  return family == NoiseFamily::gaussian ? "gaussian" : "laplace";
}

NoiseFamily parse_noise_family(const std::string& name) {
  if (name == "gaussian") return NoiseFamily::gaussian;
  if (name == "laplace") return NoiseFamily::laplace;
  throw std::invalid_argument("unknown noise family '" + name + "'");
}

const char* to_string(ResidualSource source) {
  return source == ResidualSource::ground_truth ? "ground_truth" : "predicted";
}

ResidualSource parse_residual_source(const std::string& name) {
  if (name == "ground_truth") return ResidualSource::ground_truth;
  if (name == "predicted") return ResidualSource::predicted;
  throw std::invalid_argument("unknown residual source '" + name + "'");
}

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);
const double kLog2 = std::numbers::ln2;

void check_nll_shapes(const char* who, const PlaneTensor& mean, const PlaneTensor& log_var,
                      const PlaneTensor& target) {
  if (!mean.same_shape(target)) {
    throw std::invalid_argument(std::string(who) + ": mean and target shapes differ");
  }
  if (!log_var.same_shape(mean) && !(log_var.same_spatial(mean) && log_var.channels() == 1)) {
    throw std::invalid_argument(std::string(who) + ": log_var must match mean or be 1-channel");
  }
}

// Per-element loss: returns value, writes d/d(residual) and d/d(log-scale).
template <typename Element>
NllTerm accumulate_nll(const PlaneTensor& mean, const PlaneTensor& log_var, const PlaneTensor& target,
                       Element element) {
  NllTerm term{0.0, PlaneTensor(mean.height(), mean.width(), mean.channels()),
               PlaneTensor(log_var.height(), log_var.width(), log_var.channels())};
  const int c = mean.channels();
  const bool tied = log_var.channels() == 1 && c != 1;
  for (std::size_t p = 0; p < mean.pixels(); ++p) {
    for (int k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      const std::size_t j = tied ? p : i;
      double d_mean = 0.0;
      double d_log_var = 0.0;
      term.value += element(mean[i] - target[i], log_var[j], d_mean, d_log_var);
      term.grad_mean[i] = d_mean;
      term.grad_log_var[j] += d_log_var;
    }
  }
  return term;
}

double gaussian_element(double r, double u, double& d_r, double& d_u) {
  const double inv_var = std::exp(-u);
  d_r = r * inv_var;
  d_u = 0.5 * (1.0 - r * r * inv_var);
  return 0.5 * (r * r * inv_var + u + kLog2Pi);
}

double laplace_element(double r, double b, double& d_r, double& d_b) {
  const double inv_scale = std::exp(-b);
  const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
  d_r = sign * inv_scale;
  d_b = 1.0 - std::abs(r) * inv_scale;
  return std::abs(r) * inv_scale + b + kLog2;
}

// dL/dpred given dL/dshifted, for shifted = pred + alpha(pred).
void chain_through_shift(PlaneTensor& grad, double beta) {
  const double n = static_cast<double>(grad.size());
  const double correction = sum(grad) / (n + beta);
  for (double& g : grad.data()) g -= correction;
}

void add_into(PlaneTensor& dst, const PlaneTensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void check_targets(const HeadBundle& heads, const IntrinsicTargets& targets) {
  if (!heads.albedo_mean.same_shape(targets.albedo_log) ||
      !heads.shading_mean.same_shape(targets.shading_log)) {
    throw std::invalid_argument("training loss: targets do not match head shapes");
  }
}

// Per-channel optimal shift of a constraint residual toward zero, in place.
// chain_residual_shift is its adjoint.
void shift_residual_channels(PlaneTensor& residual, double beta) {
  const int c = residual.channels();
  const double n = static_cast<double>(residual.pixels());
  for (int k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t p = 0; p < residual.pixels(); ++p) s += residual[p * c + k];
    const double alpha = -s / (n + beta);
    for (std::size_t p = 0; p < residual.pixels(); ++p) residual[p * c + k] += alpha;
  }
}

void chain_residual_shift(PlaneTensor& grad, double beta) {
  const int c = grad.channels();
  const double n = static_cast<double>(grad.pixels());
  for (int k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t p = 0; p < grad.pixels(); ++p) s += grad[p * c + k];
    const double correction = s / (n + beta);
    for (std::size_t p = 0; p < grad.pixels(); ++p) grad[p * c + k] -= correction;
  }
}

PlaneTensor lambertian_residual(const PlaneTensor& albedo, const PlaneTensor& shading,
                                const PlaneTensor& image) {
  return ewise(ewise(albedo, shading, EwiseOp::add), image, EwiseOp::sub);
}

}  // namespace

NllTerm gaussian_nll(const PlaneTensor& mean, const PlaneTensor& log_var, const PlaneTensor& target) {
  check_nll_shapes("gaussian_nll", mean, log_var, target);
  return accumulate_nll(mean, log_var, target, gaussian_element);
}

NllTerm laplace_nll(const PlaneTensor& mean, const PlaneTensor& log_var, const PlaneTensor& target) {
  check_nll_shapes("laplace_nll", mean, log_var, target);
  return accumulate_nll(mean, log_var, target, laplace_element);
}

NllTerm constraint_nll(const PlaneTensor& residual, const PlaneTensor& log_var, NoiseFamily family) {
  const PlaneTensor zero(residual.height(), residual.width(), residual.channels());
  switch (family) {
    case NoiseFamily::gaussian: return gaussian_nll(residual, log_var, zero);
    case NoiseFamily::laplace: return laplace_nll(residual, log_var, zero);
  }
  throw std::invalid_argument("constraint_nll: unknown family");
}

ShiftResult optimal_shift(const PlaneTensor& pred, const PlaneTensor& target, double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("optimal_shift: beta must be non-negative");
  if (pred.empty()) throw std::invalid_argument("optimal_shift: empty map");
  if (!pred.same_shape(target)) throw std::invalid_argument("optimal_shift: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += target[i] - pred[i];
  ShiftResult out{s / (static_cast<double>(pred.size()) + beta), pred};
  for (double& v : out.shifted.data()) v += out.alpha;
  return out;
}

LossEvaluation total_training_loss(const HeadBundle& heads, const IntrinsicTargets& targets,
                                   const PlaneTensor& image_log, const LossOptions& opt) {
  check_targets(heads, targets);
  if (!image_log.same_shape(heads.albedo_mean)) {
    throw std::invalid_argument("training loss: image does not match albedo head");
  }
  if (!(opt.lambda_reg >= 0.0)) throw std::invalid_argument("training loss: lambda_reg must be >= 0");

  const ShiftResult a = optimal_shift(heads.albedo_mean, targets.albedo_log, opt.beta);
  const ShiftResult b = optimal_shift(heads.shading_mean, targets.shading_log, opt.beta);

  LossEvaluation out;
  out.alpha_albedo = a.alpha;
  out.alpha_shading = b.alpha;
  out.grads = HeadBundle::zeros(image_log.height(), image_log.width());

  NllTerm na = gaussian_nll(a.shifted, heads.log_var_albedo, targets.albedo_log);
  NllTerm nb = gaussian_nll(b.shifted, heads.log_var_shading, targets.shading_log);

  const bool predicted = opt.residual_source == ResidualSource::predicted;
  PlaneTensor residual = predicted ? lambertian_residual(a.shifted, b.shifted, image_log)
                                   : lambertian_residual(targets.albedo_log, targets.shading_log, image_log);
  if (opt.shift_constraint) shift_residual_channels(residual, opt.beta);
  NllTerm ng = constraint_nll(residual, heads.log_var_constraint, opt.family);

  out.value = na.value + nb.value + ng.value;

  // Gradients w.r.t. the shifted means first, then through the shifts.
  PlaneTensor g_albedo = std::move(na.grad_mean);
  PlaneTensor g_shading = std::move(nb.grad_mean);
  if (predicted) {
    PlaneTensor g_res = std::move(ng.grad_mean);
    if (opt.shift_constraint) chain_residual_shift(g_res, opt.beta);
    add_into(g_albedo, g_res);
    for (std::size_t p = 0; p < g_shading.pixels(); ++p)
      for (int k = 0; k < 3; ++k) g_shading[p] += g_res[p * 3 + k];
  }
  chain_through_shift(g_albedo, opt.beta);
  chain_through_shift(g_shading, opt.beta);
  out.grads.albedo_mean = std::move(g_albedo);
  out.grads.shading_mean = std::move(g_shading);
  out.grads.log_var_albedo = std::move(na.grad_log_var);
  out.grads.log_var_shading = std::move(nb.grad_log_var);
  out.grads.log_var_constraint = std::move(ng.grad_log_var);

  if (opt.lambda_reg > 0.0) {
    const std::pair<const PlaneTensor*, PlaneTensor*> maps[] = {
        {&heads.log_var_albedo, &out.grads.log_var_albedo},
        {&heads.log_var_shading, &out.grads.log_var_shading},
        {&heads.log_var_constraint, &out.grads.log_var_constraint}};
    for (const auto& [u, g] : maps) {
      for (std::size_t i = 0; i < u->size(); ++i) {
        out.value += opt.lambda_reg * (*u)[i] * (*u)[i];
        (*g)[i] += 2.0 * opt.lambda_reg * (*u)[i];
      }
    }
  }
  return out;
}

LossEvaluation l2_training_loss(const HeadBundle& heads, const IntrinsicTargets& targets, double beta) {
  check_targets(heads, targets);
  const ShiftResult a = optimal_shift(heads.albedo_mean, targets.albedo_log, beta);
  const ShiftResult b = optimal_shift(heads.shading_mean, targets.shading_log, beta);
  LossEvaluation out;
  out.alpha_albedo = a.alpha;
  out.alpha_shading = b.alpha;
  out.grads = HeadBundle::zeros(heads.albedo_mean.height(), heads.albedo_mean.width());
  auto squared = [&out](const PlaneTensor& shifted, const PlaneTensor& target, PlaneTensor& grad) {
    for (std::size_t i = 0; i < shifted.size(); ++i) {
      const double r = shifted[i] - target[i];
      out.value += r * r;
      grad[i] = 2.0 * r;
    }
  };
  squared(a.shifted, targets.albedo_log, out.grads.albedo_mean);
  squared(b.shifted, targets.shading_log, out.grads.shading_mean);
  chain_through_shift(out.grads.albedo_mean, beta);
  chain_through_shift(out.grads.shading_mean, beta);
  return out;
}

}  // namespace csr
