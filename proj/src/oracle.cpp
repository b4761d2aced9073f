#include "csr/oracle.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace csr {

namespace {

OracleSolution unpack(const InferenceProblem& pr, InferenceMode mode, const Eigen::VectorXd& b_and_a,
                      bool eliminated) {
  const int n = static_cast<int>(pr.image_log.pixels());
  OracleSolution s;
  s.albedo_log = PlaneTensor(pr.image_log.height(), pr.image_log.width(), 3);
  s.shading_log = PlaneTensor(pr.image_log.height(), pr.image_log.width(), 1);
  if (eliminated) {
    // Layout B(p) at p, C(c) at n + c.
    for (int c = 0; c < 3; ++c) s.light_log[c] = b_and_a(n + c);
    for (int p = 0; p < n; ++p) {
      s.shading_log[p] = b_and_a(p);
      for (int c = 0; c < 3; ++c) s.albedo_log[p * 3 + c] = pr.image_log[p * 3 + c] - b_and_a(p) - s.light_log[c];
    }
  } else {
    // Layout A(p, c) at 3p + c, B(p) at 3n + p, C(c) at 4n + c.
    for (int p = 0; p < n; ++p) {
      for (int c = 0; c < 3; ++c) s.albedo_log[p * 3 + c] = b_and_a(3 * p + c);
      s.shading_log[p] = b_and_a(3 * n + p);
    }
    for (int c = 0; c < 3; ++c) s.light_log[c] = b_and_a(4 * n + c);
  }
  s.objective = inference_objective(pr, mode, s.albedo_log, s.shading_log, s.light_log);
  return s;
}

}  // namespace

OracleSolution brute_force_oracle(const InferenceProblem& pr) {
  pr.validate(InferenceMode::soft);
  const int n = static_cast<int>(pr.image_log.pixels());
  auto ia = [](int p, int c) { return 3 * p + c; };
  auto ib = [n](int p) { return 3 * n + p; };
  auto ic = [n](int c) { return 4 * n + c; };
  // One row per term of the objective. QR on the rows, not the normal
  // equations: a tiny sigma_G would square an already large condition number.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(7 * n, 4 * n + 3);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(7 * n);
  int row = 0;
  for (int p = 0; p < n; ++p) {
    const double sa = 1.0 / std::sqrt(pr.var_albedo[p]);
    const double sb = 1.0 / std::sqrt(pr.var_shading[p]);
    const double sg = 1.0 / std::sqrt(pr.var_constraint[p]);
    J(row, ib(p)) = sb;
    r(row++) = sb * pr.shading_mean[p];
    for (int c = 0; c < 3; ++c) {
      J(row, ia(p, c)) = sa;
      r(row++) = sa * pr.albedo_mean[p * 3 + c];
      J(row, ia(p, c)) = sg;
      J(row, ib(p)) = sg;
      J(row, ic(c)) = sg;
      r(row++) = sg * pr.image_log[p * 3 + c];
    }
  }
  return unpack(pr, InferenceMode::soft, J.colPivHouseholderQr().solve(r), false);
}

OracleSolution hard_constraint_oracle(const InferenceProblem& pr) {
  pr.validate(InferenceMode::hard);
  const int n = static_cast<int>(pr.image_log.pixels());
  // With A_c = I_c - B - C_c the albedo term is (B + C_c - t)^2 / 2vA,
  // t = I_c - muA_c. B + k, C - k would leave every albedo unchanged; the
  // shading prior pins that gauge.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(4 * n, n + 3);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(4 * n);
  int row = 0;
  for (int p = 0; p < n; ++p) {
    const double sa = 1.0 / std::sqrt(pr.var_albedo[p]);
    const double sb = 1.0 / std::sqrt(pr.var_shading[p]);
    J(row, p) = sb;
    r(row++) = sb * pr.shading_mean[p];
    for (int c = 0; c < 3; ++c) {
      J(row, p) = sa;
      J(row, n + c) = sa;
      r(row++) = sa * (pr.image_log[p * 3 + c] - pr.albedo_mean[p * 3 + c]);
    }
  }
  return unpack(pr, InferenceMode::hard, J.colPivHouseholderQr().solve(r), true);
}

}  // namespace csr
