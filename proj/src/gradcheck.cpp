#include "csr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>

#include "csr/losses.hpp"
#include "csr/net.hpp"

namespace csr {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int pick(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

PlaneTensor random_tensor(Rng& rng, int h, int w, int c, double lo, double hi) {
  PlaneTensor t(h, w, c);
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Keeps every value at least `margin` away from zero so that kinks (relu,
// absolute value) are never straddled by a finite-difference step.
void push_off_zero(PlaneTensor& t, double margin) {
  for (double& v : t.data())
    if (std::abs(v) < margin) v = v < 0.0 ? -margin : margin;
}

double weighted_sum(const PlaneTensor& t, const PlaneTensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * r[i];
  return s;
}

class Suite {
 public:
  Suite(std::string name, const GradcheckOptions& opt) : opt_(opt) {
    result_.name = std::move(name);
    flip_ = opt.inject_fault == "all" || opt.inject_fault == result_.name;
  }

  // Compares `analytic` with central differences of `f` in every coordinate
  // of `x`; f must read x through whatever it captured.
  void compare(std::span<double> x, std::span<const double> analytic, const std::function<double()>& f,
               const char* what) {
    if (x.size() != analytic.size()) throw std::logic_error("gradcheck: size mismatch in " + result_.name);
    const double sign = flip_ ? -1.0 : 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + opt_.step;
      const double up = f();
      x[i] = saved - opt_.step;
      const double down = f();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * opt_.step);
      const double err = relative_error(sign * analytic[i], numeric);
      ++result_.checks;
      if (err > result_.max_rel_error || !std::isfinite(err)) {
        result_.max_rel_error = std::isfinite(err) ? err : INFINITY;
        char buf[160];
        std::snprintf(buf, sizeof buf, "instance %d, %s[%zu]: analytic %.9g numeric %.9g",
                      result_.instances, what, i, sign * analytic[i], numeric);
        result_.worst = buf;
      }
    }
  }

  void next_instance() { ++result_.instances; }

  SuiteResult finish() {
    result_.passed = result_.max_rel_error < opt_.tolerance;
    return result_;
  }

 private:
  const GradcheckOptions& opt_;
  SuiteResult result_;
  bool flip_ = false;
};

LayerSpec random_layer(Rng& rng, LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  l.in_channels = pick(rng, 1, 3);
  switch (kind) {
    case LayerKind::conv:
      l.out_channels = pick(rng, 1, 3);
      l.kernel = pick(rng, 0, 1) ? 3 : 1;
      l.stride = pick(rng, 1, 2);
      l.pad = l.kernel == 3 ? pick(rng, 0, 1) : 0;
      break;
    case LayerKind::transposed_conv:
      l.out_channels = pick(rng, 1, 3);
      l.kernel = pick(rng, 0, 1) ? 4 : 3;
      l.stride = pick(rng, 1, 2);
      l.pad = pick(rng, 0, 1);
      break;
    case LayerKind::relu: l.out_channels = l.in_channels; break;
    case LayerKind::head_split:
      l.in_channels = l.out_channels = kHeadChannels;
      break;
  }
  return l;
}

SuiteResult layer_suite(LayerKind kind, const GradcheckOptions& opt, std::uint64_t seed) {
  Suite suite(std::string("layer_") + to_string(kind), opt);
  Rng rng(seed);
  for (int n = 0; n < opt.instances; ++n) {
    suite.next_instance();
    const LayerSpec l = random_layer(rng, kind);
    std::vector<double> params(l.param_count());
    for (double& p : params) p = uniform(rng, -1.0, 1.0);
    const int h = pick(rng, 3, 6);
    const int w = pick(rng, 3, 6);
    PlaneTensor input = random_tensor(rng, h, w, l.in_channels, -1.0, 1.0);
    if (kind == LayerKind::relu) push_off_zero(input, 1e-3);
    const PlaneTensor out = layer_forward(l, params, input);
    const PlaneTensor r = random_tensor(rng, out.height(), out.width(), out.channels(), -1.0, 1.0);

    std::vector<double> grad_params(l.param_count(), 0.0);
    PlaneTensor grad_input = layer_backward(l, params, input, r, grad_params);
    auto f = [&] { return weighted_sum(layer_forward(l, params, input), r); };
    suite.compare(params, grad_params, f, "param");
    suite.compare(input.data(), grad_input.data(), f, "input");
  }
  return suite.finish();
}

HeadBundle random_heads(Rng& rng, int h, int w) {
  HeadBundle b;
  b.albedo_mean = random_tensor(rng, h, w, 3, -2.0, 0.0);
  b.shading_mean = random_tensor(rng, h, w, 1, -1.5, 0.0);
  b.log_var_albedo = random_tensor(rng, h, w, 1, -1.0, 1.0);
  b.log_var_shading = random_tensor(rng, h, w, 1, -1.0, 1.0);
  b.log_var_constraint = random_tensor(rng, h, w, 1, -1.0, 1.0);
  return b;
}

struct LossInstance {
  IntrinsicTargets targets;
  PlaneTensor image_log;
};

// Targets consistent with a random light color plus a few off-constraint
// pixels, like the synthetic scenes.
LossInstance random_targets(Rng& rng, int h, int w) {
  LossInstance li;
  li.targets.albedo_log = random_tensor(rng, h, w, 3, -2.0, 0.0);
  li.targets.shading_log = random_tensor(rng, h, w, 1, -1.5, 0.0);
  li.image_log = PlaneTensor(h, w, 3);
  const double light[3] = {uniform(rng, -0.6, 0.0), uniform(rng, -0.6, 0.0), uniform(rng, -0.6, 0.0)};
  for (std::size_t p = 0; p < li.image_log.pixels(); ++p) {
    const double extra = uniform(rng, 0.0, 1.0) < 0.2 ? uniform(rng, 0.1, 0.8) : 0.0;
    for (int c = 0; c < 3; ++c) {
      li.image_log[p * 3 + c] =
          li.targets.albedo_log[p * 3 + c] + li.targets.shading_log[p] + light[c] + extra;
    }
  }
  return li;
}

// Every head map, in pack order, paired with its gradient.
void compare_heads(Suite& suite, HeadBundle& heads, const HeadBundle& grads,
                   const std::function<double()>& f) {
  suite.compare(heads.albedo_mean.data(), grads.albedo_mean.data(), f, "albedo_mean");
  suite.compare(heads.shading_mean.data(), grads.shading_mean.data(), f, "shading_mean");
  suite.compare(heads.log_var_albedo.data(), grads.log_var_albedo.data(), f, "log_var_albedo");
  suite.compare(heads.log_var_shading.data(), grads.log_var_shading.data(), f, "log_var_shading");
  suite.compare(heads.log_var_constraint.data(), grads.log_var_constraint.data(), f,
                "log_var_constraint");
}

SuiteResult nll_suite(NoiseFamily family, const GradcheckOptions& opt, std::uint64_t seed) {
  Suite suite(std::string(to_string(family)) + "_nll", opt);
  Rng rng(seed);
  auto nll = family == NoiseFamily::gaussian ? gaussian_nll : laplace_nll;
  for (int n = 0; n < opt.instances; ++n) {
    suite.next_instance();
    const int h = pick(rng, 2, 5);
    const int w = pick(rng, 2, 5);
    const int c = pick(rng, 1, 3);
    // Alternate between per-channel and tied (1-channel) variance maps.
    const int vc = n % 2 == 0 ? c : 1;
    PlaneTensor target = random_tensor(rng, h, w, c, -2.0, 2.0);
    PlaneTensor offset = random_tensor(rng, h, w, c, -1.0, 1.0);
    push_off_zero(offset, 1e-2);
    PlaneTensor mean = ewise(target, offset, EwiseOp::add);
    PlaneTensor log_var = random_tensor(rng, h, w, vc, -1.5, 1.5);
    const NllTerm t = nll(mean, log_var, target);
    auto f = [&] { return nll(mean, log_var, target).value; };
    suite.compare(mean.data(), t.grad_mean.data(), f, "mean");
    suite.compare(log_var.data(), t.grad_log_var.data(), f, "log_var");
  }
  return suite.finish();
}

SuiteResult constraint_suite(const GradcheckOptions& opt, std::uint64_t seed) {
  Suite suite("constraint_nll", opt);
  Rng rng(seed);
  for (int n = 0; n < opt.instances; ++n) {
    suite.next_instance();
    const NoiseFamily family = n % 2 == 0 ? NoiseFamily::gaussian : NoiseFamily::laplace;
    const int h = pick(rng, 2, 5);
    const int w = pick(rng, 2, 5);
    PlaneTensor residual = random_tensor(rng, h, w, 3, -1.0, 1.0);
    push_off_zero(residual, 1e-2);
    PlaneTensor log_var = random_tensor(rng, h, w, 1, -1.5, 1.5);
    const NllTerm t = constraint_nll(residual, log_var, family);
    auto f = [&] { return constraint_nll(residual, log_var, family).value; };
    suite.compare(residual.data(), t.grad_mean.data(), f, "residual");
    suite.compare(log_var.data(), t.grad_log_var.data(), f, "log_var");
  }
  return suite.finish();
}

// d/dpred of sum(r * shifted) where shifted = pred + alpha(pred).
SuiteResult shift_suite(const GradcheckOptions& opt, std::uint64_t seed) {
  Suite suite("optimal_shift", opt);
  Rng rng(seed);
  for (int n = 0; n < opt.instances; ++n) {
    suite.next_instance();
    const int h = pick(rng, 2, 5);
    const int w = pick(rng, 2, 5);
    const int c = pick(rng, 1, 3);
    const double beta = uniform(rng, 0.0, 2.0);
    PlaneTensor pred = random_tensor(rng, h, w, c, -2.0, 2.0);
    const PlaneTensor target = random_tensor(rng, h, w, c, -2.0, 2.0);
    const PlaneTensor r = random_tensor(rng, h, w, c, -1.0, 1.0);
    const double rsum = sum(r);
    const double n_total = static_cast<double>(pred.size());
    std::vector<double> analytic(pred.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = r[i] - rsum / (n_total + beta);
    auto f = [&] { return weighted_sum(optimal_shift(pred, target, beta).shifted, r); };
    suite.compare(pred.data(), analytic, f, "pred");
  }
  return suite.finish();
}

SuiteResult total_loss_suite(ResidualSource source, const GradcheckOptions& opt, std::uint64_t seed) {
  Suite suite(std::string("total_loss_") + to_string(source), opt);
  Rng rng(seed);
  for (int n = 0; n < opt.instances; ++n) {
    suite.next_instance();
    const int h = pick(rng, 2, 4);
    const int w = pick(rng, 2, 4);
    LossOptions lo;
    lo.residual_source = source;
    lo.family = n % 2 == 0 ? NoiseFamily::gaussian : NoiseFamily::laplace;
    lo.shift_constraint = n % 4 != 3;
    lo.lambda_reg = uniform(rng, 0.0, 0.1);
    lo.beta = uniform(rng, 0.1, 1.0);
    const LossInstance li = random_targets(rng, h, w);
    HeadBundle heads = random_heads(rng, h, w);
    const LossEvaluation ev = total_training_loss(heads, li.targets, li.image_log, lo);
    auto f = [&] { return total_training_loss(heads, li.targets, li.image_log, lo).value; };
    compare_heads(suite, heads, ev.grads, f);
  }
  return suite.finish();
}

SuiteResult l2_suite(const GradcheckOptions& opt, std::uint64_t seed) {
  Suite suite("l2_loss", opt);
  Rng rng(seed);
  for (int n = 0; n < opt.instances; ++n) {
    suite.next_instance();
    const int h = pick(rng, 2, 4);
    const int w = pick(rng, 2, 4);
    const double beta = uniform(rng, 0.1, 1.0);
    const LossInstance li = random_targets(rng, h, w);
    HeadBundle heads = random_heads(rng, h, w);
    const LossEvaluation ev = l2_training_loss(heads, li.targets, beta);
    auto f = [&] { return l2_training_loss(heads, li.targets, beta).value; };
    compare_heads(suite, heads, ev.grads, f);
  }
  return suite.finish();
}

// Smallest distance of any relu input from zero in a cached forward pass.
double relu_margin(const NetState& net, const ActivationCache& cache) {
  double m = INFINITY;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].kind != LayerKind::relu) continue;
    for (double v : cache.layer_inputs[i].data()) m = std::min(m, std::abs(v));
  }
  return m;
}

// Whole encoder-decoder with unit widths under a random linear readout of
// the heads. The losses have their own suites; a summed training loss here
// would be large enough for roundoff to swamp the smallest input gradients.
SuiteResult micro_net_suite(const GradcheckOptions& opt, std::uint64_t seed) {
  Suite suite("micro_net", opt);
  Rng rng(seed);
  const NetWidths widths{1, 1, 1, 1, 1};
  for (int n = 0; n < opt.instances; ++n) {
    suite.next_instance();
    const int h = 4 * pick(rng, 1, 2);
    const int w = 4 * pick(rng, 1, 2);
    NetState net;
    PlaneTensor input;
    for (int attempt = 0;; ++attempt) {
      net = init_net(desk_scale_architecture(widths), rng());
      // Random biases so relu units are not all dead on a tiny net.
      for (double& v : net.weights) v += uniform(rng, -0.3, 0.3);
      input = random_tensor(rng, h, w, 3, -2.0, 0.0);
      const auto [heads, cache] = forward(net, input);
      if (relu_margin(net, cache) > 1e-3 || attempt > 200) break;
    }
    const PlaneTensor r = random_tensor(rng, h, w, kHeadChannels, -1.0, 1.0);
    const auto [heads, cache] = forward(net, input);
    PlaneTensor grad_input;
    const WeightGradients g = backward(net, cache, HeadBundle::unpack(r), &grad_input);
    auto f = [&] { return weighted_sum(forward(net, input).first.pack(), r); };
    suite.compare(net.weights, g.values, f, "weight");
    suite.compare(input.data(), grad_input.data(), f, "input");
  }
  return suite.finish();
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::vector<std::string> gradcheck_suite_names() {
  return {"layer_conv",       "layer_transposed_conv",  "layer_relu",
          "layer_head_split", "micro_net",              "gaussian_nll",
          "laplace_nll",      "constraint_nll",         "optimal_shift",
          "total_loss_ground_truth", "total_loss_predicted", "l2_loss"};
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  if (opt.instances < 1) throw std::invalid_argument("gradcheck: instances must be >= 1");
  if (!(opt.step > 0.0)) throw std::invalid_argument("gradcheck: step must be > 0");
  if (!opt.inject_fault.empty() && opt.inject_fault != "all") {
    const auto names = gradcheck_suite_names();
    if (std::find(names.begin(), names.end(), opt.inject_fault) == names.end()) {
      throw std::invalid_argument("gradcheck: unknown suite '" + opt.inject_fault + "'");
    }
  }
  // Each suite gets its own stream so adding a suite never shifts another.
  const std::uint64_t s = opt.seed;
  GradcheckReport report;
  report.suites.push_back(layer_suite(LayerKind::conv, opt, s + 1));
  report.suites.push_back(layer_suite(LayerKind::transposed_conv, opt, s + 2));
  report.suites.push_back(layer_suite(LayerKind::relu, opt, s + 3));
  report.suites.push_back(layer_suite(LayerKind::head_split, opt, s + 4));
  report.suites.push_back(micro_net_suite(opt, s + 5));
  report.suites.push_back(nll_suite(NoiseFamily::gaussian, opt, s + 6));
  report.suites.push_back(nll_suite(NoiseFamily::laplace, opt, s + 7));
  report.suites.push_back(constraint_suite(opt, s + 8));
  report.suites.push_back(shift_suite(opt, s + 9));
  report.suites.push_back(total_loss_suite(ResidualSource::ground_truth, opt, s + 10));
  report.suites.push_back(total_loss_suite(ResidualSource::predicted, opt, s + 11));
  report.suites.push_back(l2_suite(opt, s + 12));
  return report;
}

bool GradcheckReport::passed() const {
  return !suites.empty() &&
         std::all_of(suites.begin(), suites.end(), [](const SuiteResult& r) { return r.passed; });
}

const SuiteResult& GradcheckReport::worst_suite() const {
  if (suites.empty()) throw std::logic_error("gradcheck: empty report");
  return *std::max_element(suites.begin(), suites.end(), [](const SuiteResult& a, const SuiteResult& b) {
    return a.max_rel_error < b.max_rel_error;
  });
}

std::string GradcheckReport::to_text() const {
  std::string out;
  char buf[256];
  for (const SuiteResult& r : suites) {
    std::snprintf(buf, sizeof buf, "%-24s instances %3d  checks %7ld  max rel err %.3e  %s\n", r.name.c_str(),
                  r.instances, r.checks, r.max_rel_error, r.passed ? "PASS" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace csr
