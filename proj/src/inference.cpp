#include "csr/inference.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace csr {

const char* to_string(InferenceMode mode) { return mode == InferenceMode::soft ? "soft" : "hard"; }

namespace {

void check_pixel(const PixelProblem& p, bool need_constraint_var) {
  auto ok = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!ok(p.var_albedo) || !ok(p.var_shading) || (need_constraint_var && !ok(p.var_constraint))) {
    throw std::invalid_argument("pixel problem: variances must be positive and finite");
  }
}

// Solves H x = g for a symmetric positive-definite 3x3 H (Cholesky).
Rgb solve_spd3(const std::array<std::array<double, 3>, 3>& h, const Rgb& g) {
  std::array<std::array<double, 3>, 3> l{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = h[i][j];
      for (int k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      if (i == j) {
        if (!(s > 0.0)) throw std::runtime_error("solve_spd3: matrix is not positive definite");
        l[i][i] = std::sqrt(s);
      } else {
        l[i][j] = s / l[j][j];
      }
    }
  }
  Rgb y{};
  for (int i = 0; i < 3; ++i) {
    double s = g[i];
    for (int k = 0; k < i; ++k) s -= l[i][k] * y[k];
    y[i] = s / l[i][i];
  }
  Rgb x{};
  for (int i = 2; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < 3; ++k) s -= l[k][i] * x[k];
    x[i] = s / l[i][i];
  }
  return x;
}

void check_map(const PlaneTensor& t, const PlaneTensor& ref, int channels, const char* name) {
  if (!t.same_spatial(ref) || t.channels() != channels) {
    throw std::invalid_argument(std::string("inference problem: ") + name + " is misaligned");
  }
}

// Per-pixel variances; the constraint variance is 0 in hard mode, which
// turns every formula below into its equality-constrained limit.
struct PixelVars {
  double va;
  double vb;
  double vg;
};

PixelVars vars_at(const InferenceProblem& pr, InferenceMode mode, std::size_t p) {
  return {pr.var_albedo[p], pr.var_shading[p],
          mode == InferenceMode::soft ? pr.var_constraint[p] : 0.0};
}

struct Iterate {
  PlaneTensor albedo;
  PlaneTensor shading;
  Rgb light{};
};

void coupled_light_step(const InferenceProblem& pr, InferenceMode mode, Iterate& it) {
  std::array<std::array<double, 3>, 3> hess{};
  Rgb grad{};
  for (std::size_t p = 0; p < pr.image_log.pixels(); ++p) {
    const auto [va, vb, vg] = vars_at(pr, mode, p);
    const double s = va + vg;
    const double h = va / s;
    const double k = vb / (s + 3.0 * vb);
    const double eb = it.shading[p] - pr.shading_mean[p];
    for (int c = 0; c < 3; ++c) {
      const double ea = it.albedo[p * 3 + c] - pr.albedo_mean[p * 3 + c];
      const double xi = mode == InferenceMode::soft
                            ? it.albedo[p * 3 + c] + it.shading[p] + it.light[c] - pr.image_log[p * 3 + c]
                            : 0.0;
      // Direction of albedo channel c (times -h) and of the slack (times
      // 1 - h) per unit light change: e_c - k * ones.
      Rgb dir{};
      for (int j = 0; j < 3; ++j) dir[j] = (j == c ? 1.0 : 0.0) - k;
      const double slack_curv = vg / (s * s);
      for (int i = 0; i < 3; ++i) {
        grad[i] += -h * ea * dir[i] / va + xi * dir[i] / s;
        for (int j = 0; j < 3; ++j) hess[i][j] += (h * h / va + slack_curv) * dir[i] * dir[j];
      }
    }
    for (int i = 0; i < 3; ++i) {
      grad[i] += -k * eb / vb;
      for (int j = 0; j < 3; ++j) hess[i][j] += k * k / vb;
    }
  }
  const Rgb step = solve_spd3(hess, grad);
  const Rgb delta{-step[0], -step[1], -step[2]};
  const double total = delta[0] + delta[1] + delta[2];
  for (int c = 0; c < 3; ++c) it.light[c] += delta[c];
  for (std::size_t p = 0; p < pr.image_log.pixels(); ++p) {
    const auto [va, vb, vg] = vars_at(pr, mode, p);
    const double s = va + vg;
    const double h = va / s;
    const double k = vb / (s + 3.0 * vb);
    it.shading[p] -= k * total;
    for (int c = 0; c < 3; ++c) it.albedo[p * 3 + c] -= h * (delta[c] - k * total);
  }
}

void coupled_shading_step(const InferenceProblem& pr, InferenceMode mode, Iterate& it) {
  for (std::size_t p = 0; p < pr.image_log.pixels(); ++p) {
    const auto [va, vb, vg] = vars_at(pr, mode, p);
    const double s = va + vg;
    const double h = va / s;
    double slope = (it.shading[p] - pr.shading_mean[p]) / vb;
    for (int c = 0; c < 3; ++c) {
      slope -= h * (it.albedo[p * 3 + c] - pr.albedo_mean[p * 3 + c]) / va;
      if (mode == InferenceMode::soft) {
        slope += (it.albedo[p * 3 + c] + it.shading[p] + it.light[c] - pr.image_log[p * 3 + c]) / s;
      }
    }
    const double curvature = 3.0 * h * h / va + 1.0 / vb + 3.0 * vg / (s * s);
    const double step = -slope / curvature;
    it.shading[p] += step;
    for (int c = 0; c < 3; ++c) it.albedo[p * 3 + c] -= h * step;
  }
}

void albedo_step(const InferenceProblem& pr, InferenceMode mode, Iterate& it) {
  for (std::size_t p = 0; p < pr.image_log.pixels(); ++p) {
    const auto [va, vb, vg] = vars_at(pr, mode, p);
    for (int c = 0; c < 3; ++c) {
      const double target = pr.image_log[p * 3 + c] - it.light[c] - it.shading[p];
      it.albedo[p * 3 + c] = (vg * pr.albedo_mean[p * 3 + c] + va * target) / (va + vg);
    }
  }
}

void plain_light_step(const InferenceProblem& pr, InferenceMode mode, Iterate& it) {
  if (mode == InferenceMode::soft) {
    it.light = solve_global_color(it.albedo, it.shading, pr.image_log, pr.var_constraint);
  } else {
    // Albedo is eliminated (A = I - C - B), so C sees the albedo prior.
    it.light = solve_global_color(pr.albedo_mean, it.shading, pr.image_log, pr.var_albedo);
    albedo_step(pr, mode, it);
  }
}

void plain_shading_step(const InferenceProblem& pr, InferenceMode mode, Iterate& it) {
  for (std::size_t p = 0; p < pr.image_log.pixels(); ++p) {
    const auto [va, vb, vg] = vars_at(pr, mode, p);
    if (mode == InferenceMode::hard) {
      PixelProblem px;
      px.var_albedo = va;
      px.var_shading = vb;
      px.mu_shading = pr.shading_mean[p];
      for (int c = 0; c < 3; ++c) {
        px.mu_albedo[c] = pr.albedo_mean[p * 3 + c];
        px.image_log[c] = pr.image_log[p * 3 + c];
        px.light_log[c] = it.light[c];
      }
      const PixelSolution sol = solve_pixel_hard(px);
      it.shading[p] = sol.shading_log;
      for (int c = 0; c < 3; ++c) it.albedo[p * 3 + c] = sol.albedo_log[c];
    } else {
      double pull = 0.0;
      for (int c = 0; c < 3; ++c) {
        pull += pr.image_log[p * 3 + c] - it.light[c] - it.albedo[p * 3 + c];
      }
      it.shading[p] = (vg * pr.shading_mean[p] + vb * pull) / (vg + 3.0 * vb);
    }
  }
}

}  // namespace

PixelSolution solve_pixel_soft(const PixelProblem& p) {
  check_pixel(p, true);
  const double s = p.var_albedo + p.var_constraint;
  Rgb gap{};
  double gap_sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    gap[c] = p.image_log[c] - p.light_log[c] - p.mu_albedo[c];
    gap_sum += gap[c];
  }
  PixelSolution out;
  out.shading_log = (s * p.mu_shading + p.var_shading * gap_sum) / (s + 3.0 * p.var_shading);
  for (int c = 0; c < 3; ++c) {
    out.albedo_log[c] = p.mu_albedo[c] + p.var_albedo * (gap[c] - out.shading_log) / s;
  }
  return out;
}

PixelSolution solve_pixel_hard(const PixelProblem& p) {
  check_pixel(p, false);
  double gap_sum = 0.0;
  for (int c = 0; c < 3; ++c) gap_sum += p.image_log[c] - p.light_log[c] - p.mu_albedo[c];
  PixelSolution out;
  out.shading_log = (p.var_albedo * p.mu_shading + p.var_shading * gap_sum) /
                    (p.var_albedo + 3.0 * p.var_shading);
  for (int c = 0; c < 3; ++c) {
    out.albedo_log[c] = p.image_log[c] - p.light_log[c] - out.shading_log;
  }
  return out;
}

Rgb solve_global_color(const PlaneTensor& albedo_log, const PlaneTensor& shading_log,
                       const PlaneTensor& image_log, const PlaneTensor& var) {
  if (image_log.empty()) throw std::invalid_argument("solve_global_color: empty image");
  check_map(albedo_log, image_log, 3, "albedo");
  check_map(shading_log, image_log, 1, "shading");
  check_map(var, image_log, 1, "variance");
  if (image_log.channels() != 3) throw std::invalid_argument("solve_global_color: image must be RGB");
  Rgb num{};
  double den = 0.0;
  for (std::size_t p = 0; p < image_log.pixels(); ++p) {
    if (!(var[p] > 0.0)) throw std::invalid_argument("solve_global_color: variance must be positive");
    const double w = 1.0 / var[p];
    den += w;
    for (int c = 0; c < 3; ++c) {
      num[c] += w * (image_log[p * 3 + c] - albedo_log[p * 3 + c] - shading_log[p]);
    }
  }
  return {num[0] / den, num[1] / den, num[2] / den};
}

InferenceProblem InferenceProblem::from_heads(const HeadBundle& heads, const PlaneTensor& image_log,
                                              NoiseFamily constraint_family,
                                              bool unit_output_variances) {
  InferenceProblem pr;
  pr.albedo_mean = heads.albedo_mean;
  pr.shading_mean = heads.shading_mean;
  pr.image_log = image_log;
  pr.var_albedo = unit_output_variances ? PlaneTensor(image_log.height(), image_log.width(), 1, 1.0)
                                        : exp_map(heads.log_var_albedo);
  pr.var_shading = unit_output_variances ? PlaneTensor(image_log.height(), image_log.width(), 1, 1.0)
                                         : exp_map(heads.log_var_shading);
  pr.var_constraint = heads.log_var_constraint;
  for (double& v : pr.var_constraint.data()) {
    v = constraint_family == NoiseFamily::gaussian ? std::exp(v) : 2.0 * std::exp(2.0 * v);
  }
  return pr;
}

void InferenceProblem::validate(InferenceMode mode) const {
  if (image_log.empty() || image_log.channels() != 3) {
    throw std::invalid_argument("inference problem: image must be a non-empty RGB map");
  }
  check_map(albedo_mean, image_log, 3, "albedo mean");
  check_map(shading_mean, image_log, 1, "shading mean");
  check_map(var_albedo, image_log, 1, "albedo variance");
  check_map(var_shading, image_log, 1, "shading variance");
  if (mode == InferenceMode::soft) check_map(var_constraint, image_log, 1, "constraint variance");
  auto positive = [](const PlaneTensor& t) {
    for (double v : t.data())
      if (!(v > 0.0 && std::isfinite(v))) return false;
    return true;
  };
  if (!positive(var_albedo) || !positive(var_shading) ||
      (mode == InferenceMode::soft && !positive(var_constraint))) {
    throw std::invalid_argument("inference problem: variances must be positive and finite");
  }
}

double inference_objective(const InferenceProblem& pr, InferenceMode mode,
                           const PlaneTensor& albedo_log, const PlaneTensor& shading_log,
                           const Rgb& light_log) {
  double f = 0.0;
  for (std::size_t p = 0; p < pr.image_log.pixels(); ++p) {
    const double eb = shading_log[p] - pr.shading_mean[p];
    f += eb * eb / (2.0 * pr.var_shading[p]);
    for (int c = 0; c < 3; ++c) {
      const double ea = albedo_log[p * 3 + c] - pr.albedo_mean[p * 3 + c];
      f += ea * ea / (2.0 * pr.var_albedo[p]);
      if (mode == InferenceMode::soft) {
        const double xi = albedo_log[p * 3 + c] + shading_log[p] + light_log[c] - pr.image_log[p * 3 + c];
        f += xi * xi / (2.0 * pr.var_constraint[p]);
      }
    }
  }
  return f;
}

PlaneTensor slack_map(const PlaneTensor& albedo_log, const PlaneTensor& shading_log,
                      const Rgb& light_log, const PlaneTensor& image_log) {
  PlaneTensor slack(image_log.height(), image_log.width(), 3);
  for (std::size_t p = 0; p < image_log.pixels(); ++p)
    for (int c = 0; c < 3; ++c)
      slack[p * 3 + c] = albedo_log[p * 3 + c] + shading_log[p] + light_log[c] - image_log[p * 3 + c];
  return slack;
}

DecompositionResult alternating_decompose(const InferenceProblem& pr, const AlternationOptions& opt) {
  if (opt.max_sweeps < 1) throw std::invalid_argument("alternating_decompose: sweeps must be >= 1");
  pr.validate(opt.mode);

  Iterate it{pr.albedo_mean, pr.shading_mean, {0.0, 0.0, 0.0}};
  // Hard mode iterates stay feasible: start from A = I - C - B.
  if (opt.mode == InferenceMode::hard) albedo_step(pr, opt.mode, it);

  DecompositionResult out;
  auto objective = [&] { return inference_objective(pr, opt.mode, it.albedo, it.shading, it.light); };
  double current = objective();
  out.objective_trace.push_back(current);
  out.step_trace.push_back(current);

  const bool coupled = opt.schedule == AlternationSchedule::coupled;
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    coupled ? coupled_light_step(pr, opt.mode, it) : plain_light_step(pr, opt.mode, it);
    out.step_trace.push_back(objective());
    coupled ? coupled_shading_step(pr, opt.mode, it) : plain_shading_step(pr, opt.mode, it);
    out.step_trace.push_back(objective());
    albedo_step(pr, opt.mode, it);
    const double next = objective();
    out.step_trace.push_back(next);
    out.objective_trace.push_back(next);
    out.sweeps = sweep + 1;
    const bool converged = current - next < opt.tolerance * std::max(1.0, std::abs(current));
    current = next;
    if (converged) break;
  }

  out.slack = slack_map(it.albedo, it.shading, it.light, pr.image_log);
  out.albedo_log = std::move(it.albedo);
  out.shading_log = std::move(it.shading);
  out.light_log = it.light;
  return out;
}

DecompositionResult alternating_decompose(const HeadBundle& heads, const PlaneTensor& image_log,
                                          InferenceMode mode, int sweeps) {
  AlternationOptions opt;
  opt.mode = mode;
  opt.max_sweeps = sweeps;
  return alternating_decompose(InferenceProblem::from_heads(heads, image_log), opt);
}

}  // namespace csr
