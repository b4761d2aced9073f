#include "csr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace csr {

namespace {

void check_dims(int height, int width, int channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("PlaneTensor: dimensions must be positive, got " +
                                std::to_string(height) + "x" + std::to_string(width) + "x" +
                                std::to_string(channels));
  }
}

}  // namespace

PlaneTensor::PlaneTensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  check_dims(height, width, channels);
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

PlaneTensor::PlaneTensor(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  check_dims(height, width, channels);
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw std::invalid_argument("PlaneTensor: data length does not match h*w*c");
  }
}

LogDomainImage to_log(const PlaneTensor& img, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("to_log: epsilon must be positive");
  }
  PlaneTensor out = img;
  for (double& v : out.data()) {
    if (!(v >= 0.0)) throw std::invalid_argument("to_log: image values must be non-negative");
    v = std::log(std::max(v, epsilon));
  }
  return LogDomainImage(std::move(out), epsilon);
}

PlaneTensor from_log(const LogDomainImage& img) { return exp_map(img.planes()); }

PlaneTensor exp_map(const PlaneTensor& log_values) {
  PlaneTensor out = log_values;
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

PlaneTensor ewise(const PlaneTensor& a, const PlaneTensor& b, EwiseOp op) {
  auto apply = [op](double x, double y) {
    switch (op) {
      case EwiseOp::add: return x + y;
      case EwiseOp::sub: return x - y;
      case EwiseOp::mul: return x * y;
    }
    return 0.0;
  };

  PlaneTensor out = a;
  const int c = a.channels();
  if (a.same_shape(b)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(a[i], b[i]);
  } else if (b.height() == 1 && b.width() == 1 && b.channels() == c) {
    for (std::size_t p = 0; p < out.pixels(); ++p)
      for (int k = 0; k < c; ++k) out[p * c + k] = apply(a[p * c + k], b[k]);
  } else if (a.same_spatial(b) && b.channels() == 1) {
    for (std::size_t p = 0; p < out.pixels(); ++p)
      for (int k = 0; k < c; ++k) out[p * c + k] = apply(a[p * c + k], b[p]);
  } else {
    throw std::invalid_argument("ewise: shapes are neither equal nor broadcastable");
  }
  return out;
}

PlaneTensor slice_channels(const PlaneTensor& t, int first, int count) {
  if (first < 0 || count <= 0 || first + count > t.channels()) {
    throw std::invalid_argument("slice_channels: channel range out of bounds");
  }
  PlaneTensor out(t.height(), t.width(), count);
  for (std::size_t p = 0; p < t.pixels(); ++p)
    for (int k = 0; k < count; ++k) out[p * count + k] = t[p * t.channels() + first + k];
  return out;
}

double sum(const PlaneTensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

double dot(const PlaneTensor& a, const PlaneTensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool all_finite(const PlaneTensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

PlaneTensor flip(const PlaneTensor& t, bool horizontal, bool vertical) {
  PlaneTensor out(t.height(), t.width(), t.channels());
  for (int y = 0; y < t.height(); ++y) {
    const int sy = vertical ? t.height() - 1 - y : y;
    for (int x = 0; x < t.width(); ++x) {
      const int sx = horizontal ? t.width() - 1 - x : x;
      for (int c = 0; c < t.channels(); ++c) out(y, x, c) = t(sy, sx, c);
    }
  }
  return out;
}

PlaneTensor transpose_spatial(const PlaneTensor& t) {
  PlaneTensor out(t.width(), t.height(), t.channels());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      for (int c = 0; c < t.channels(); ++c) out(x, y, c) = t(y, x, c);
  return out;
}

}  // namespace csr
