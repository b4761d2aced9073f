#pragma once

#include <vector>

#include "csr/tensor.hpp"

namespace csr {

/// Optimal multiplicative scale <pred, truth> / <pred, pred> (0 if pred == 0).
double optimal_scale(const PlaneTensor& pred, const PlaneTensor& truth);

/// Scale-invariant MSE: min_s mean((s * pred - truth)^2).
double si_mse(const PlaneTensor& pred, const PlaneTensor& truth);

/// Local MSE: scale-invariant squared error summed over sliding windows,
/// normalized by the summed truth energy of the same windows. Windows start
/// every `stride` pixels; the last window along an axis is clipped to the
/// image when the grid does not end exactly on the border.
double lmse(const PlaneTensor& pred, const PlaneTensor& truth, int window, int stride);

struct LmseGeometry {
  int window;
  int stride;
};
/// window = max(2, floor(0.1 * max(h, w))), stride = max(1, window / 2).
LmseGeometry default_lmse_geometry(int height, int width);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean SSIM (channel mean of per-channel means) using a Gaussian window
/// with symmetric edge padding. Inputs are clipped to [0, data_range].
double ssim(const PlaneTensor& pred, const PlaneTensor& truth, const SsimParams& params = {});

/// (1 - SSIM) / 2, in [0, 1].
double dssim(const PlaneTensor& pred, const PlaneTensor& truth, const SsimParams& params = {});

struct MetricTriple {
  double mse = 0.0;
  double lmse = 0.0;
  double dssim = 0.0;
};

/// Aggregate over images; each field is the mean of `per_image`.
struct MetricReport {
  MetricTriple mean;
  std::vector<MetricTriple> per_image;

  void add(const MetricTriple& m);
};

struct EvaluationOptions {
  int lmse_window = 0;  // 0 selects default_lmse_geometry
  int lmse_stride = 0;
  SsimParams ssim;
};

/// All three metrics for one linear-domain prediction. DSSIM is computed on
/// the prediction rescaled by its optimal scale, so all three are scale
/// invariant.
MetricTriple evaluate_pair(const PlaneTensor& pred, const PlaneTensor& truth,
                           const EvaluationOptions& options = {});

}  // namespace csr
