#include "csr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace csr {

namespace {

void check_pair(const char* who, const PlaneTensor& pred, const PlaneTensor& truth) {
  if (!pred.same_shape(truth)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
  if (pred.empty()) throw std::invalid_argument(std::string(who) + ": empty image");
}

// Half-sample symmetric reflection: -1 -> 0, -2 -> 1, n -> n - 1.
int reflect(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const double center = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-(i - center) * (i - center) / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

// Separable Gaussian filter of a single-channel plane stored row-major.
std::vector<double> blur(const std::vector<double>& src, int h, int w, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<double> tmp(src.size());
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int j = 0; j < static_cast<int>(k.size()); ++j) s += k[j] * src[y * w + reflect(x + j - r, w)];
      tmp[y * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int j = 0; j < static_cast<int>(k.size()); ++j) s += k[j] * tmp[reflect(y + j - r, h) * w + x];
      out[y * w + x] = s;
    }
  }
  return out;
}

}  // namespace

double optimal_scale(const PlaneTensor& pred, const PlaneTensor& truth) {
  check_pair("optimal_scale", pred, truth);
  double pt = 0.0;
  double pp = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pt += pred[i] * truth[i];
    pp += pred[i] * pred[i];
  }
  return pp > 0.0 ? pt / pp : 0.0;
}

double si_mse(const PlaneTensor& pred, const PlaneTensor& truth) {
  const double s = optimal_scale(pred, truth);
  double err = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = s * pred[i] - truth[i];
    err += r * r;
  }
  return err / static_cast<double>(pred.size());
}

LmseGeometry default_lmse_geometry(int height, int width) {
  const int window = std::max(2, static_cast<int>(std::floor(0.1 * std::max(height, width))));
  return {window, std::max(1, window / 2)};
}

double lmse(const PlaneTensor& pred, const PlaneTensor& truth, int window, int stride) {
  check_pair("lmse", pred, truth);
  if (window < 2) throw std::invalid_argument("lmse: window must be >= 2");
  if (stride < 1) throw std::invalid_argument("lmse: stride must be >= 1");
  if (window > pred.height() || window > pred.width()) {
    throw std::invalid_argument("lmse: window larger than image");
  }
  auto starts = [&](int n) {
    std::vector<int> s;
    for (int at = 0;; at += stride) {
      s.push_back(at);
      if (at + window >= n) break;
    }
    return s;
  };
  const int c = pred.channels();
  double err = 0.0;
  double energy = 0.0;
  for (int y0 : starts(pred.height())) {
    const int y1 = std::min(y0 + window, pred.height());
    for (int x0 : starts(pred.width())) {
      const int x1 = std::min(x0 + window, pred.width());
      double pt = 0.0;
      double pp = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int k = 0; k < c; ++k) {
            pt += pred(y, x, k) * truth(y, x, k);
            pp += pred(y, x, k) * pred(y, x, k);
          }
      const double s = pp > 0.0 ? pt / pp : 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int k = 0; k < c; ++k) {
            const double r = s * pred(y, x, k) - truth(y, x, k);
            err += r * r;
            energy += truth(y, x, k) * truth(y, x, k);
          }
    }
  }
  if (!(energy > 0.0)) throw std::invalid_argument("lmse: truth has zero energy");
  return err / energy;
}

double ssim(const PlaneTensor& pred, const PlaneTensor& truth, const SsimParams& prm) {
  check_pair("ssim", pred, truth);
  if (prm.window < 1 || prm.window % 2 == 0) throw std::invalid_argument("ssim: window must be odd");
  const int h = pred.height();
  const int w = pred.width();
  const int channels = pred.channels();
  const double c1 = (prm.k1 * prm.data_range) * (prm.k1 * prm.data_range);
  const double c2 = (prm.k2 * prm.data_range) * (prm.k2 * prm.data_range);
  const auto kernel = gaussian_kernel(prm.window, prm.sigma);
  const std::size_t n = pred.pixels();

  double total = 0.0;
  for (int ch = 0; ch < channels; ++ch) {
    std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
    for (std::size_t p = 0; p < n; ++p) {
      a[p] = std::clamp(pred[p * channels + ch], 0.0, prm.data_range);
      b[p] = std::clamp(truth[p * channels + ch], 0.0, prm.data_range);
      aa[p] = a[p] * a[p];
      bb[p] = b[p] * b[p];
      ab[p] = a[p] * b[p];
    }
    const auto mu_a = blur(a, h, w, kernel);
    const auto mu_b = blur(b, h, w, kernel);
    const auto e_aa = blur(aa, h, w, kernel);
    const auto e_bb = blur(bb, h, w, kernel);
    const auto e_ab = blur(ab, h, w, kernel);
    double sum_map = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double var_a = e_aa[p] - mu_a[p] * mu_a[p];
      const double var_b = e_bb[p] - mu_b[p] * mu_b[p];
      const double cov = e_ab[p] - mu_a[p] * mu_b[p];
      sum_map += ((2.0 * mu_a[p] * mu_b[p] + c1) * (2.0 * cov + c2)) /
                 ((mu_a[p] * mu_a[p] + mu_b[p] * mu_b[p] + c1) * (var_a + var_b + c2));
    }
    total += sum_map / static_cast<double>(n);
  }
  return total / channels;
}

double dssim(const PlaneTensor& pred, const PlaneTensor& truth, const SsimParams& params) {
  return std::clamp((1.0 - ssim(pred, truth, params)) / 2.0, 0.0, 1.0);
}

void MetricReport::add(const MetricTriple& m) {
  per_image.push_back(m);
  const double n = static_cast<double>(per_image.size());
  MetricTriple s;
  for (const MetricTriple& t : per_image) {
    s.mse += t.mse;
    s.lmse += t.lmse;
    s.dssim += t.dssim;
  }
  mean = {s.mse / n, s.lmse / n, s.dssim / n};
}

MetricTriple evaluate_pair(const PlaneTensor& pred, const PlaneTensor& truth,
                           const EvaluationOptions& opt) {
  LmseGeometry g = default_lmse_geometry(truth.height(), truth.width());
  if (opt.lmse_window > 0) g.window = opt.lmse_window;
  if (opt.lmse_stride > 0) g.stride = opt.lmse_stride;
  PlaneTensor scaled = pred;
  const double s = optimal_scale(pred, truth);
  for (double& v : scaled.data()) v *= s;
  return {si_mse(pred, truth), lmse(pred, truth, g.window, g.stride), dssim(scaled, truth, opt.ssim)};
}

}  // namespace csr
