#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csr/tensor.hpp"

namespace csr {

enum class LayerKind : std::uint32_t { conv = 0, transposed_conv = 1, relu = 2, head_split = 3 };

const char* to_string(LayerKind kind);

/// One layer of the encoder-decoder. Kernels are square; `kernel`, `stride`
/// and `pad` are ignored for relu / head_split.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  bool has_weights() const {
    return kind == LayerKind::conv || kind == LayerKind::transposed_conv;
  }
  /// Kernel weights, laid out [ky][kx][in][out] for both conv kinds.
  std::size_t weight_count() const;
  std::size_t bias_count() const { return has_weights() ? out_channels : 0; }
  std::size_t param_count() const { return weight_count() + bias_count(); }

  bool operator==(const LayerSpec&) const = default;
};

inline constexpr int kHeadChannels = 7;

/// All prediction heads of one forward pass, at input resolution.
/// Means are log-domain; variance maps hold log(sigma^2).
struct HeadBundle {
  PlaneTensor albedo_mean;         // 3 channels
  PlaneTensor shading_mean;        // 1 channel
  PlaneTensor log_var_albedo;      // 1 channel, tied across albedo channels
  PlaneTensor log_var_shading;     // 1 channel
  PlaneTensor log_var_constraint;  // 1 channel

  static HeadBundle zeros(int height, int width);
  /// Packs the heads into the 7-channel layout [A0 A1 A2 B uA uB uG].
  PlaneTensor pack() const;
  static HeadBundle unpack(const PlaneTensor& packed);
};

/// Channel widths of the desk-scale encoder-decoder.
struct NetWidths {
  int enc1 = 16;
  int enc2 = 32;
  int enc3 = 32;
  int dec1 = 16;
  int dec2 = 16;
};

/// conv3x3 s1 -> relu -> conv3x3 s2 -> relu -> conv3x3 s2 -> relu ->
/// tconv4x4 s2 -> relu -> tconv4x4 s2 -> relu -> conv1x1 -> head_split.
std::vector<LayerSpec> desk_scale_architecture(const NetWidths& widths = {});

/// Validates channel chaining and stride rules; throws std::invalid_argument.
void validate_architecture(const std::vector<LayerSpec>& layers);

/// Parameters and Adam moments. All trainable values live in one flat
/// vector; `offsets()[i]` is where layer i's weights start, followed by its
/// biases.
struct NetState {
  std::vector<LayerSpec> layers;
  std::vector<double> weights;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::int64_t step_count = 0;
  std::uint64_t rng_seed = 0;

  std::vector<std::size_t> offsets() const;
  /// Product of the encoder strides; input dims must be divisible by it.
  int spatial_divisor() const;

  bool operator==(const NetState&) const = default;
};

/// Seeded Glorot-uniform weights, zero biases, zero moments.
NetState init_net(std::vector<LayerSpec> layers, std::uint64_t seed);

struct WeightGradients {
  std::vector<double> values;
};

/// Layer inputs recorded by forward, plus a fingerprint of the state that
/// produced them so backward can reject a stale cache.
struct ActivationCache {
  std::vector<PlaneTensor> layer_inputs;
  std::int64_t step_count = -1;
  std::size_t weight_count = 0;
};

std::pair<HeadBundle, ActivationCache> forward(const NetState& net, const LogDomainImage& image);
std::pair<HeadBundle, ActivationCache> forward(const NetState& net, const PlaneTensor& input);

/// Reverse pass. `head_grads` holds dLoss/dHead for every head map.
/// If `input_grad` is non-null it receives dLoss/dInput.
WeightGradients backward(const NetState& net, const ActivationCache& cache,
                         const HeadBundle& head_grads, PlaneTensor* input_grad = nullptr);

// Single-layer primitives, exposed for gradient checking.
PlaneTensor layer_forward(const LayerSpec& spec, std::span<const double> params,
                          const PlaneTensor& input);
PlaneTensor layer_backward(const LayerSpec& spec, std::span<const double> params,
                           const PlaneTensor& input, const PlaneTensor& grad_output,
                           std::span<double> grad_params);

struct AdamParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update; increments step_count.
void adam_step(NetState& net, const WeightGradients& grads, const AdamParams& params);

// Checkpoint: "CSRNET01", architecture, little-endian float64 weights and
// moments, step_count.
void write_checkpoint(std::ostream& out, const NetState& net);
NetState read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const NetState& net);
NetState load_checkpoint(const std::string& path);

}  // namespace csr
