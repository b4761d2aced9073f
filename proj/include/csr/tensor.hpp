#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace csr {

/// Dense height x width x channels array of doubles, row-major HWC.
///
/// Every image-like quantity in the project (linear images, log images,
/// predicted means, log-variance maps, gradients) is a PlaneTensor. The
/// layout is fixed: element (y, x, c) lives at ((y * width) + x) * channels + c.
class PlaneTensor {
 public:
  PlaneTensor() = default;
  PlaneTensor(int height, int width, int channels, double fill = 0.0);
  PlaneTensor(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int y, int x, int c) { return data_[index(y, x, c)]; }
  double operator()(int y, int x, int c) const { return data_[index(y, x, c)]; }
  double* ptr(int y, int x, int c) { return data_.data() + index(y, x, c); }
  const double* ptr(int y, int x, int c) const { return data_.data() + index(y, x, c); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  /// Channel values of one pixel.
  std::span<double> pixel(std::size_t p) {
    return std::span<double>(data_).subspan(p * channels_, channels_);
  }
  std::span<const double> pixel(std::size_t p) const {
    return std::span<const double>(data_).subspan(p * channels_, channels_);
  }

  bool same_shape(const PlaneTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool same_spatial(const PlaneTensor& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  bool operator==(const PlaneTensor&) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Element-wise log of a linear image, clamped below at `epsilon`.
/// Only `to_log` constructs one.
class LogDomainImage {
 public:
  const PlaneTensor& planes() const { return planes_; }
  double epsilon() const { return epsilon_; }

 private:
  LogDomainImage(PlaneTensor planes, double epsilon)
      : planes_(std::move(planes)), epsilon_(epsilon) {}
  friend LogDomainImage to_log(const PlaneTensor& img, double epsilon);

  PlaneTensor planes_;
  double epsilon_;
};

inline constexpr double kDefaultLogEpsilon = 1e-4;

LogDomainImage to_log(const PlaneTensor& img, double epsilon = kDefaultLogEpsilon);
PlaneTensor from_log(const LogDomainImage& img);
/// exp() of a raw log-domain tensor (network heads, inferred maps).
PlaneTensor exp_map(const PlaneTensor& log_values);

enum class EwiseOp { add, sub, mul };

/// Element-wise `a op b`. `b` either matches `a` exactly, is a 1x1xC
/// per-channel vector, or is an HxWx1 map broadcast across channels.
PlaneTensor ewise(const PlaneTensor& a, const PlaneTensor& b, EwiseOp op);

/// Channel range [first, first + count) of `t`.
PlaneTensor slice_channels(const PlaneTensor& t, int first, int count);

double sum(const PlaneTensor& t);
double dot(const PlaneTensor& a, const PlaneTensor& b);
bool all_finite(const PlaneTensor& t);

/// Mirror along x and/or y, then optionally swap axes. Used for dihedral
/// data augmentation and metric symmetry tests.
PlaneTensor flip(const PlaneTensor& t, bool horizontal, bool vertical);
PlaneTensor transpose_spatial(const PlaneTensor& t);

}  // namespace csr
