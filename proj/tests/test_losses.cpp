#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "csr/losses.hpp"
#include "csr/net.hpp"
#include "test_util.hpp"

using namespace csr;
using csr::testing::random_tensor;
using csr::testing::row;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

PlaneTensor scalar(double v) { return row({v}); }

HeadBundle heads_from(const IntrinsicTargets& t, double log_var) {
  HeadBundle h = HeadBundle::zeros(t.shading_log.height(), t.shading_log.width());
  h.albedo_mean = t.albedo_log;
  h.shading_mean = t.shading_log;
  for (PlaneTensor* m : {&h.log_var_albedo, &h.log_var_shading, &h.log_var_constraint})
    for (double& v : m->data()) v = log_var;
  return h;
}

IntrinsicTargets random_targets(std::uint64_t seed, int h, int w) {
  return {random_tensor(seed, h, w, 3, -2, 0), random_tensor(seed + 1, h, w, 1, -1.5, 0)};
}

PlaneTensor lambertian_image(const IntrinsicTargets& t) { return ewise(t.albedo_log, t.shading_log, EwiseOp::add); }

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("gaussian nll worked values") {
    CHECK(gaussian_nll(scalar(0), scalar(0), scalar(0)).value == doctest::Approx(0.91894).epsilon(1e-5));
    CHECK(gaussian_nll(scalar(1), scalar(0), scalar(0)).value == doctest::Approx(1.41894).epsilon(1e-5));
    const double oracle = 0.5 * (4.0 * std::exp(-1.0) + 1.0 + std::log(2.0 * std::numbers::pi));
    const NllTerm t = gaussian_nll(scalar(0), scalar(1), scalar(2));
    CHECK(t.value == doctest::Approx(2.15469).epsilon(1e-5));
    CHECK(std::abs(t.value - oracle) < 1e-14);
    CHECK(t.grad_mean[0] == doctest::Approx(-2.0 * std::exp(-1.0)));
    CHECK(t.grad_log_var[0] == doctest::Approx(0.5 * (1.0 - 4.0 * std::exp(-1.0))));
  }

  TEST_CASE("laplace nll worked values") {
    CHECK(laplace_nll(scalar(0.3), scalar(0), scalar(0.3)).value == doctest::Approx(0.69315).epsilon(1e-5));
    CHECK(laplace_nll(scalar(1), scalar(0), scalar(0)).value == doctest::Approx(1.69315).epsilon(1e-5));
    CHECK(laplace_nll(scalar(2), scalar(std::log(2.0)), scalar(0)).value == doctest::Approx(2.38629).epsilon(1e-5));
    // Subgradient 0 at an exact zero residual.
    CHECK(laplace_nll(scalar(0.3), scalar(0), scalar(0.3)).grad_mean[0] == 0.0);
  }

  TEST_CASE("constraint nll worked values") {
    const PlaneTensor zero(1, 1, 3);
    const PlaneTensor one(1, 1, 3, 1.0);
    const PlaneTensor u(1, 1, 1);
    CHECK(constraint_nll(zero, u, NoiseFamily::gaussian).value == doctest::Approx(3 * kHalfLog2Pi));
    CHECK(constraint_nll(one, u, NoiseFamily::gaussian).value == doctest::Approx(3 * (0.5 + kHalfLog2Pi)));
    CHECK(constraint_nll(one, u, NoiseFamily::laplace).value == doctest::Approx(3 * (1 + std::log(2.0))));
  }

  TEST_CASE("nll shape errors") {
    CHECK_THROWS_AS(gaussian_nll(row({1, 2}), row({0, 0}), row({1})), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_nll(PlaneTensor(2, 2, 3), PlaneTensor(2, 2, 2), PlaneTensor(2, 2, 3)),
                    std::invalid_argument);
    CHECK_THROWS_AS(laplace_nll(row({1}), row({0, 0}), row({1})), std::invalid_argument);
    CHECK_THROWS_AS(constraint_nll(PlaneTensor(2, 2, 3), PlaneTensor(2, 1, 1), NoiseFamily::gaussian),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_noise_family("cauchy"), std::invalid_argument);
  }

  TEST_CASE("tied variance broadcasts and accumulates over channels") {
    const PlaneTensor mean = random_tensor(1, 3, 3, 3, -1, 1);
    const PlaneTensor target = random_tensor(2, 3, 3, 3, -1, 1);
    const PlaneTensor u1 = random_tensor(3, 3, 3, 1, -1, 1);
    PlaneTensor u3(3, 3, 3);
    for (std::size_t p = 0; p < u1.pixels(); ++p)
      for (int c = 0; c < 3; ++c) u3[p * 3 + c] = u1[p];
    for (auto nll : {gaussian_nll, laplace_nll}) {
      const NllTerm tied = nll(mean, u1, target);
      const NllTerm full = nll(mean, u3, target);
      CHECK(tied.value == doctest::Approx(full.value).epsilon(1e-14));
      CHECK(tied.grad_mean == full.grad_mean);
      for (std::size_t p = 0; p < u1.pixels(); ++p) {
        const double s = full.grad_log_var[p * 3] + full.grad_log_var[p * 3 + 1] + full.grad_log_var[p * 3 + 2];
        CHECK(tied.grad_log_var[p] == doctest::Approx(s).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("frozen unit variance reduces to half the euclidean loss") {
    const PlaneTensor mean = random_tensor(4, 4, 4, 3, -2, 2);
    const PlaneTensor target = random_tensor(5, 4, 4, 3, -2, 2);
    const NllTerm t = gaussian_nll(mean, PlaneTensor(4, 4, 3), target);
    double l2 = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const double d = mean[i] - target[i];
      l2 += d * d;
      CHECK(t.grad_mean[i] == doctest::Approx(d).epsilon(1e-15));  // half of d/dmu (mu - y)^2
    }
    CHECK(t.value == doctest::Approx(0.5 * l2 + mean.size() * kHalfLog2Pi).epsilon(1e-13));
  }

  TEST_CASE("log-variance gradient vanishes at the optimum") {
    const PlaneTensor mean = row({0.7, -1.2, 3.0});
    const PlaneTensor target = row({0.1, 0.4, 2.5});
    PlaneTensor u = mean;
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::log((mean[i] - target[i]) * (mean[i] - target[i]));
    const NllTerm t = gaussian_nll(mean, u, target);
    for (double g : t.grad_log_var.data()) CHECK(std::abs(g) < 1e-14);
  }

  TEST_CASE("optimal shift examples") {
    CHECK(optimal_shift(row({1, 2}), row({1, 2}), 0.5).alpha == 0.0);
    CHECK(optimal_shift(row({0, 0}), row({1, 1}), 0.5).alpha == doctest::Approx(0.8).epsilon(1e-15));
    const ShiftResult s = optimal_shift(row({0}), row({3}), 0.5);
    CHECK(s.alpha == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(s.shifted[0] == doctest::Approx(2.0));
  }

  TEST_CASE("optimal shift first-order condition") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const PlaneTensor pred = random_tensor(seed, 3, 4, 3, -2, 2);
      const PlaneTensor target = random_tensor(seed + 100, 3, 4, 3, -2, 2);
      const double beta = 0.1 * static_cast<double>(seed);
      const double alpha = optimal_shift(pred, target, beta).alpha;
      double foc = beta * alpha;
      for (std::size_t i = 0; i < pred.size(); ++i) foc += alpha + pred[i] - target[i];
      CHECK(std::abs(foc) < 1e-10);
    }
  }

  TEST_CASE("shifting the prediction moves alpha in closed form") {
    const PlaneTensor pred = random_tensor(1, 4, 4, 1, -2, 2);
    const PlaneTensor target = random_tensor(2, 4, 4, 1, -2, 2);
    const double beta = 0.5;
    const double c = 0.37;
    const double n = static_cast<double>(pred.size());
    PlaneTensor moved = pred;
    for (double& v : moved.data()) v += c;
    const double a0 = optimal_shift(pred, target, beta).alpha;
    const double a1 = optimal_shift(moved, target, beta).alpha;
    CHECK(a1 - a0 == doctest::Approx(-c * n / (n + beta)).epsilon(1e-12));
    // beta = 0: the shifted map does not move at all.
    const auto s0 = optimal_shift(pred, target, 0.0).shifted;
    const auto s1 = optimal_shift(moved, target, 0.0).shifted;
    CHECK(csr::testing::max_abs(s0, s1) < 1e-14);
  }

  TEST_CASE("optimal shift errors") {
    CHECK_THROWS_AS(optimal_shift(PlaneTensor(), PlaneTensor(), 0.5), std::invalid_argument);
    CHECK_THROWS_AS(optimal_shift(row({1}), row({1}), -0.1), std::invalid_argument);
    CHECK_THROWS_AS(optimal_shift(row({1, 2}), row({1}), 0.5), std::invalid_argument);
  }

  TEST_CASE("total loss: perfect prediction, unit variances") {
    const IntrinsicTargets t = random_targets(3, 4, 4);
    LossOptions opt;
    opt.lambda_reg = 0.0;
    for (ResidualSource src : {ResidualSource::ground_truth, ResidualSource::predicted}) {
      opt.residual_source = src;
      const LossEvaluation ev = total_training_loss(heads_from(t, 0.0), t, lambertian_image(t), opt);
      CHECK(ev.value == doctest::Approx(16 * 7 * kHalfLog2Pi).epsilon(1e-13));
      CHECK(ev.alpha_albedo == 0.0);
      CHECK(ev.alpha_shading == 0.0);
    }
  }

  TEST_CASE("total loss: regularizer is zero at zero log-variance") {
    const IntrinsicTargets t = random_targets(4, 4, 4);
    const HeadBundle h = heads_from(random_targets(5, 4, 4), 0.0);
    LossOptions a;
    a.lambda_reg = 0.0;
    LossOptions b;
    b.lambda_reg = 0.3;
    const PlaneTensor img = lambertian_image(t);
    CHECK(total_training_loss(h, t, img, a).value == total_training_loss(h, t, img, b).value);
    // ... and adds lambda * sum(u^2) otherwise.
    const HeadBundle h2 = heads_from(random_targets(5, 4, 4), 0.5);
    const double diff = total_training_loss(h2, t, img, b).value - total_training_loss(h2, t, img, a).value;
    CHECK(diff == doctest::Approx(0.3 * 3 * 16 * 0.25).epsilon(1e-12));
  }

  TEST_CASE("total loss: global light color is absorbed by the constraint shift") {
    const IntrinsicTargets t = random_targets(6, 4, 4);
    PlaneTensor img = lambertian_image(t);
    const double light[3] = {-0.2, -0.5, -0.1};
    for (std::size_t p = 0; p < img.pixels(); ++p)
      for (int c = 0; c < 3; ++c) img[p * 3 + c] += light[c];
    LossOptions opt;
    opt.lambda_reg = 0.0;
    const HeadBundle h = heads_from(t, 0.0);
    // The regularized shift leaves beta / (N + beta) of each channel offset.
    double expected = 16 * 7 * kHalfLog2Pi;
    for (double l : light) expected += 16 * 0.5 * std::pow(l * opt.beta / (16 + opt.beta), 2);
    CHECK(total_training_loss(h, t, img, opt).value == doctest::Approx(expected).epsilon(1e-13));
    opt.shift_constraint = false;
    CHECK(total_training_loss(h, t, img, opt).value > 16 * 7 * kHalfLog2Pi + 0.1);
  }

  TEST_CASE("total loss: residual source matters only through the means") {
    const IntrinsicTargets t = random_targets(7, 4, 4);
    const HeadBundle h = heads_from(random_targets(8, 4, 4), 0.2);
    const PlaneTensor img = lambertian_image(t);
    LossOptions gt;
    LossOptions pr;
    pr.residual_source = ResidualSource::predicted;
    const LossEvaluation a = total_training_loss(h, t, img, gt);
    const LossEvaluation b = total_training_loss(h, t, img, pr);
    CHECK(a.value != b.value);
    CHECK(a.grads.albedo_mean != b.grads.albedo_mean);
    CHECK(a.grads.log_var_albedo == b.grads.log_var_albedo);
    CHECK(a.grads.log_var_shading == b.grads.log_var_shading);
    CHECK(parse_residual_source("predicted") == ResidualSource::predicted);
    CHECK_THROWS_AS(parse_residual_source("both"), std::invalid_argument);
  }

  TEST_CASE("l2 loss detaches the variance heads") {
    const IntrinsicTargets t = random_targets(9, 4, 4);
    const HeadBundle h = heads_from(random_targets(10, 4, 4), 0.7);
    const LossEvaluation ev = l2_training_loss(h, t, 0.5);
    for (const PlaneTensor* g : {&ev.grads.log_var_albedo, &ev.grads.log_var_shading, &ev.grads.log_var_constraint})
      for (double v : g->data()) CHECK(v == 0.0);
    // value = ||shifted A - A~||^2 + ||shifted B - B~||^2
    const ShiftResult sa = optimal_shift(h.albedo_mean, t.albedo_log, 0.5);
    const ShiftResult sb = optimal_shift(h.shading_mean, t.shading_log, 0.5);
    double v = 0.0;
    for (std::size_t i = 0; i < sa.shifted.size(); ++i) v += std::pow(sa.shifted[i] - t.albedo_log[i], 2);
    for (std::size_t i = 0; i < sb.shifted.size(); ++i) v += std::pow(sb.shifted[i] - t.shading_log[i], 2);
    CHECK(ev.value == doctest::Approx(v).epsilon(1e-13));
  }
}
