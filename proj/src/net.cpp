#include "csr/net.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "byte_io.hpp"
#include "csr/errors.hpp"

namespace csr {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::transposed_conv: return "transposed_conv";
    case LayerKind::relu: return "relu";
    case LayerKind::head_split: return "head_split";
  }
  return "unknown";
}

std::size_t LayerSpec::weight_count() const {
  if (!has_weights()) return 0;
  return static_cast<std::size_t>(kernel) * kernel * in_channels * out_channels;
}

HeadBundle HeadBundle::zeros(int height, int width) {
  return HeadBundle{PlaneTensor(height, width, 3), PlaneTensor(height, width, 1),
                    PlaneTensor(height, width, 1), PlaneTensor(height, width, 1),
                    PlaneTensor(height, width, 1)};
}

PlaneTensor HeadBundle::pack() const {
  const int h = albedo_mean.height();
  const int w = albedo_mean.width();
  for (const PlaneTensor* t :
       {&shading_mean, &log_var_albedo, &log_var_shading, &log_var_constraint}) {
    if (t->height() != h || t->width() != w || t->channels() != 1) {
      throw std::invalid_argument("HeadBundle: head maps are not aligned");
    }
  }
  if (albedo_mean.channels() != 3) throw std::invalid_argument("HeadBundle: albedo must be 3-channel");
  PlaneTensor out(h, w, kHeadChannels);
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    double* o = out.data().data() + p * kHeadChannels;
    o[0] = albedo_mean[p * 3 + 0];
    o[1] = albedo_mean[p * 3 + 1];
    o[2] = albedo_mean[p * 3 + 2];
    o[3] = shading_mean[p];
    o[4] = log_var_albedo[p];
    o[5] = log_var_shading[p];
    o[6] = log_var_constraint[p];
  }
  return out;
}

HeadBundle HeadBundle::unpack(const PlaneTensor& packed) {
  if (packed.channels() != kHeadChannels) {
    throw std::invalid_argument("HeadBundle::unpack: expected 7 channels");
  }
  HeadBundle hb = zeros(packed.height(), packed.width());
  for (std::size_t p = 0; p < packed.pixels(); ++p) {
    const double* s = packed.data().data() + p * kHeadChannels;
    hb.albedo_mean[p * 3 + 0] = s[0];
    hb.albedo_mean[p * 3 + 1] = s[1];
    hb.albedo_mean[p * 3 + 2] = s[2];
    hb.shading_mean[p] = s[3];
    hb.log_var_albedo[p] = s[4];
    hb.log_var_shading[p] = s[5];
    hb.log_var_constraint[p] = s[6];
  }
  return hb;
}

std::vector<LayerSpec> desk_scale_architecture(const NetWidths& w) {
  using K = LayerKind;
  return {
      {K::conv, 3, w.enc1, 3, 1, 1},
      {K::relu, w.enc1, w.enc1, 1, 1, 0},
      {K::conv, w.enc1, w.enc2, 3, 2, 1},
      {K::relu, w.enc2, w.enc2, 1, 1, 0},
      {K::conv, w.enc2, w.enc3, 3, 2, 1},
      {K::relu, w.enc3, w.enc3, 1, 1, 0},
      {K::transposed_conv, w.enc3, w.dec1, 4, 2, 1},
      {K::relu, w.dec1, w.dec1, 1, 1, 0},
      {K::transposed_conv, w.dec1, w.dec2, 4, 2, 1},
      {K::relu, w.dec2, w.dec2, 1, 1, 0},
      {K::conv, w.dec2, kHeadChannels, 1, 1, 0},
      {K::head_split, kHeadChannels, kHeadChannels, 1, 1, 0},
  };
}

void validate_architecture(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw std::invalid_argument("architecture: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "architecture: layer " + std::to_string(i) + " ";
    if (l.in_channels <= 0 || l.out_channels <= 0) throw std::invalid_argument(where + "bad channels");
    if (l.has_weights()) {
      if (l.kernel <= 0 || l.pad < 0) throw std::invalid_argument(where + "bad kernel/pad");
      if (l.stride != 1 && l.stride != 2) throw std::invalid_argument(where + "stride must be 1 or 2");
      if (l.kind == LayerKind::transposed_conv && l.kernel < 2 * l.pad + l.stride) {
        throw std::invalid_argument(where + "transposed conv would shrink its input");
      }
    } else if (l.in_channels != l.out_channels) {
      throw std::invalid_argument(where + "activation must preserve channels");
    }
    if (i > 0 && layers[i - 1].out_channels != l.in_channels) {
      throw std::invalid_argument(where + "channel count does not chain");
    }
    if (l.kind == LayerKind::head_split &&
        (i + 1 != layers.size() || l.in_channels != kHeadChannels)) {
      throw std::invalid_argument(where + "head_split must be last with 7 channels");
    }
  }
  if (layers.back().kind != LayerKind::head_split) {
    throw std::invalid_argument("architecture: must end in head_split");
  }
}

std::vector<std::size_t> NetState::offsets() const {
  std::vector<std::size_t> out;
  out.reserve(layers.size());
  std::size_t at = 0;
  for (const LayerSpec& l : layers) {
    out.push_back(at);
    at += l.param_count();
  }
  return out;
}

int NetState::spatial_divisor() const {
  int d = 1;
  for (const LayerSpec& l : layers)
    if (l.kind == LayerKind::conv) d *= l.stride;
  return d;
}

NetState init_net(std::vector<LayerSpec> layers, std::uint64_t seed) {
  validate_architecture(layers);
  NetState net;
  net.layers = std::move(layers);
  net.rng_seed = seed;
  std::size_t total = 0;
  for (const LayerSpec& l : net.layers) total += l.param_count();
  net.weights.assign(total, 0.0);
  net.adam_m.assign(total, 0.0);
  net.adam_v.assign(total, 0.0);

  std::mt19937_64 rng(seed);
  const auto offsets = net.offsets();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (!l.has_weights()) continue;
    const double area = static_cast<double>(l.kernel) * l.kernel;
    const double limit = std::sqrt(6.0 / (area * l.in_channels + area * l.out_channels));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < l.weight_count(); ++k) net.weights[offsets[i] + k] = dist(rng);
  }
  return net;
}

namespace {

struct Geometry {
  int out_h;
  int out_w;
};

Geometry output_geometry(const LayerSpec& l, const PlaneTensor& in) {
  switch (l.kind) {
    case LayerKind::conv: {
      const int oh = (in.height() + 2 * l.pad - l.kernel) / l.stride + 1;
      const int ow = (in.width() + 2 * l.pad - l.kernel) / l.stride + 1;
      return {oh, ow};
    }
    case LayerKind::transposed_conv:
      return {(in.height() - 1) * l.stride - 2 * l.pad + l.kernel,
              (in.width() - 1) * l.stride - 2 * l.pad + l.kernel};
    default: return {in.height(), in.width()};
  }
}

void check_layer_input(const LayerSpec& l, std::span<const double> params, const PlaneTensor& in) {
  if (in.channels() != l.in_channels) {
    throw std::invalid_argument(std::string(to_string(l.kind)) + ": input has " +
                                std::to_string(in.channels()) + " channels, expected " +
                                std::to_string(l.in_channels));
  }
  if (params.size() != l.param_count()) throw std::invalid_argument("layer: parameter count mismatch");
  if (l.kind == LayerKind::conv &&
      (in.height() + 2 * l.pad < l.kernel || in.width() + 2 * l.pad < l.kernel)) {
    throw std::invalid_argument("conv: input smaller than kernel");
  }
}

// The two convolution kinds share one index map: a "small" grid position
// (y, x) and kernel tap (ky, kx) touch "big" grid position
// (y*stride - pad + ky, x*stride - pad + kx). For conv the small grid is the
// output; for the transposed conv it is the input.

PlaneTensor conv_forward(const LayerSpec& l, std::span<const double> params, const PlaneTensor& in) {
  const auto [oh, ow] = output_geometry(l, in);
  const int ci = l.in_channels;
  const int co = l.out_channels;
  const double* w = params.data();
  const double* bias = w + l.weight_count();
  PlaneTensor out(oh, ow, co);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* o = out.ptr(oy, ox, 0);
      for (int k = 0; k < co; ++k) o[k] = bias[k];
      for (int ky = 0; ky < l.kernel; ++ky) {
        const int iy = oy * l.stride - l.pad + ky;
        if (iy < 0 || iy >= in.height()) continue;
        for (int kx = 0; kx < l.kernel; ++kx) {
          const int ix = ox * l.stride - l.pad + kx;
          if (ix < 0 || ix >= in.width()) continue;
          const double* src = in.ptr(iy, ix, 0);
          const double* tap = w + static_cast<std::size_t>(ky * l.kernel + kx) * ci * co;
          for (int i = 0; i < ci; ++i) {
            const double v = src[i];
            const double* row = tap + static_cast<std::size_t>(i) * co;
            for (int k = 0; k < co; ++k) o[k] += v * row[k];
          }
        }
      }
    }
  }
  return out;
}

PlaneTensor conv_backward(const LayerSpec& l, std::span<const double> params, const PlaneTensor& in,
                          const PlaneTensor& gout, std::span<double> gparams) {
  const int ci = l.in_channels;
  const int co = l.out_channels;
  const double* w = params.data();
  double* gw = gparams.data();
  double* gb = gw + l.weight_count();
  PlaneTensor gin(in.height(), in.width(), ci);
  for (int oy = 0; oy < gout.height(); ++oy) {
    for (int ox = 0; ox < gout.width(); ++ox) {
      const double* g = gout.ptr(oy, ox, 0);
      for (int k = 0; k < co; ++k) gb[k] += g[k];
      for (int ky = 0; ky < l.kernel; ++ky) {
        const int iy = oy * l.stride - l.pad + ky;
        if (iy < 0 || iy >= in.height()) continue;
        for (int kx = 0; kx < l.kernel; ++kx) {
          const int ix = ox * l.stride - l.pad + kx;
          if (ix < 0 || ix >= in.width()) continue;
          const double* src = in.ptr(iy, ix, 0);
          double* gsrc = gin.ptr(iy, ix, 0);
          const std::size_t tap = static_cast<std::size_t>(ky * l.kernel + kx) * ci * co;
          for (int i = 0; i < ci; ++i) {
            const double* row = w + tap + static_cast<std::size_t>(i) * co;
            double* grow = gw + tap + static_cast<std::size_t>(i) * co;
            const double v = src[i];
            double acc = 0.0;
            for (int k = 0; k < co; ++k) {
              acc += g[k] * row[k];
              grow[k] += v * g[k];
            }
            gsrc[i] += acc;
          }
        }
      }
    }
  }
  return gin;
}

PlaneTensor tconv_forward(const LayerSpec& l, std::span<const double> params, const PlaneTensor& in) {
  const auto [oh, ow] = output_geometry(l, in);
  const int ci = l.in_channels;
  const int co = l.out_channels;
  const double* w = params.data();
  const double* bias = w + l.weight_count();
  PlaneTensor out(oh, ow, co);
  for (std::size_t p = 0; p < out.pixels(); ++p)
    for (int k = 0; k < co; ++k) out[p * co + k] = bias[k];
  for (int iy = 0; iy < in.height(); ++iy) {
    for (int ix = 0; ix < in.width(); ++ix) {
      const double* src = in.ptr(iy, ix, 0);
      for (int ky = 0; ky < l.kernel; ++ky) {
        const int oy = iy * l.stride - l.pad + ky;
        if (oy < 0 || oy >= oh) continue;
        for (int kx = 0; kx < l.kernel; ++kx) {
          const int ox = ix * l.stride - l.pad + kx;
          if (ox < 0 || ox >= ow) continue;
          double* o = out.ptr(oy, ox, 0);
          const double* tap = w + static_cast<std::size_t>(ky * l.kernel + kx) * ci * co;
          for (int i = 0; i < ci; ++i) {
            const double v = src[i];
            const double* row = tap + static_cast<std::size_t>(i) * co;
            for (int k = 0; k < co; ++k) o[k] += v * row[k];
          }
        }
      }
    }
  }
  return out;
}

PlaneTensor tconv_backward(const LayerSpec& l, std::span<const double> params, const PlaneTensor& in,
                           const PlaneTensor& gout, std::span<double> gparams) {
  const int ci = l.in_channels;
  const int co = l.out_channels;
  const double* w = params.data();
  double* gw = gparams.data();
  double* gb = gw + l.weight_count();
  for (std::size_t p = 0; p < gout.pixels(); ++p)
    for (int k = 0; k < co; ++k) gb[k] += gout[p * co + k];
  PlaneTensor gin(in.height(), in.width(), ci);
  for (int iy = 0; iy < in.height(); ++iy) {
    for (int ix = 0; ix < in.width(); ++ix) {
      const double* src = in.ptr(iy, ix, 0);
      double* gsrc = gin.ptr(iy, ix, 0);
      for (int ky = 0; ky < l.kernel; ++ky) {
        const int oy = iy * l.stride - l.pad + ky;
        if (oy < 0 || oy >= gout.height()) continue;
        for (int kx = 0; kx < l.kernel; ++kx) {
          const int ox = ix * l.stride - l.pad + kx;
          if (ox < 0 || ox >= gout.width()) continue;
          const double* g = gout.ptr(oy, ox, 0);
          const std::size_t tap = static_cast<std::size_t>(ky * l.kernel + kx) * ci * co;
          for (int i = 0; i < ci; ++i) {
            const double* row = w + tap + static_cast<std::size_t>(i) * co;
            double* grow = gw + tap + static_cast<std::size_t>(i) * co;
            const double v = src[i];
            double acc = 0.0;
            for (int k = 0; k < co; ++k) {
              acc += g[k] * row[k];
              grow[k] += v * g[k];
            }
            gsrc[i] += acc;
          }
        }
      }
    }
  }
  return gin;
}

}  // namespace

PlaneTensor layer_forward(const LayerSpec& spec, std::span<const double> params,
                          const PlaneTensor& input) {
  check_layer_input(spec, params, input);
  switch (spec.kind) {
    case LayerKind::conv: return conv_forward(spec, params, input);
    case LayerKind::transposed_conv: return tconv_forward(spec, params, input);
    case LayerKind::relu: {
      PlaneTensor out = input;
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::head_split: return input;
  }
  throw std::invalid_argument("layer_forward: unknown layer kind");
}

PlaneTensor layer_backward(const LayerSpec& spec, std::span<const double> params,
                           const PlaneTensor& input, const PlaneTensor& grad_output,
                           std::span<double> grad_params) {
  check_layer_input(spec, params, input);
  if (grad_params.size() != spec.param_count()) {
    throw std::invalid_argument("layer_backward: gradient buffer size mismatch");
  }
  const auto [oh, ow] = output_geometry(spec, input);
  if (grad_output.height() != oh || grad_output.width() != ow ||
      grad_output.channels() != spec.out_channels) {
    throw std::invalid_argument("layer_backward: output gradient has the wrong shape");
  }
  switch (spec.kind) {
    case LayerKind::conv: return conv_backward(spec, params, input, grad_output, grad_params);
    case LayerKind::transposed_conv:
      return tconv_backward(spec, params, input, grad_output, grad_params);
    case LayerKind::relu: {
      // Subgradient 0 at exactly zero.
      PlaneTensor gin = grad_output;
      for (std::size_t i = 0; i < gin.size(); ++i)
        if (!(input[i] > 0.0)) gin[i] = 0.0;
      return gin;
    }
    case LayerKind::head_split: return grad_output;
  }
  throw std::invalid_argument("layer_backward: unknown layer kind");
}

std::pair<HeadBundle, ActivationCache> forward(const NetState& net, const LogDomainImage& image) {
  return forward(net, image.planes());
}

std::pair<HeadBundle, ActivationCache> forward(const NetState& net, const PlaneTensor& input) {
  if (net.layers.empty()) throw std::invalid_argument("forward: empty network");
  if (input.channels() != net.layers.front().in_channels) {
    throw std::invalid_argument("forward: expected " + std::to_string(net.layers.front().in_channels) +
                                "-channel input");
  }
  const int div = net.spatial_divisor();
  if (input.height() % div != 0 || input.width() % div != 0) {
    throw std::invalid_argument("forward: image dimensions " + std::to_string(input.height()) + "x" +
                                std::to_string(input.width()) + " are not divisible by " +
                                std::to_string(div));
  }
  const auto offsets = net.offsets();
  ActivationCache cache;
  cache.step_count = net.step_count;
  cache.weight_count = net.weights.size();
  cache.layer_inputs.reserve(net.layers.size());
  PlaneTensor x = input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    std::span<const double> params(net.weights.data() + offsets[i], l.param_count());
    PlaneTensor y = layer_forward(l, params, x);
    cache.layer_inputs.push_back(std::move(x));
    x = std::move(y);
  }
  if (x.height() != input.height() || x.width() != input.width()) {
    throw std::logic_error("forward: architecture does not restore input resolution");
  }
  return {HeadBundle::unpack(x), std::move(cache)};
}

WeightGradients backward(const NetState& net, const ActivationCache& cache,
                         const HeadBundle& head_grads, PlaneTensor* input_grad) {
  if (cache.layer_inputs.size() != net.layers.size() || cache.step_count != net.step_count ||
      cache.weight_count != net.weights.size()) {
    throw std::logic_error("backward: activation cache does not match the network state");
  }
  const auto offsets = net.offsets();
  WeightGradients grads;
  grads.values.assign(net.weights.size(), 0.0);
  PlaneTensor g = head_grads.pack();
  const PlaneTensor& last_input = cache.layer_inputs.back();
  if (!g.same_spatial(last_input)) throw std::invalid_argument("backward: head gradients misaligned");
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const LayerSpec& l = net.layers[i];
    std::span<const double> params(net.weights.data() + offsets[i], l.param_count());
    std::span<double> gparams(grads.values.data() + offsets[i], l.param_count());
    g = layer_backward(l, params, cache.layer_inputs[i], g, gparams);
  }
  if (input_grad != nullptr) *input_grad = std::move(g);
  return grads;
}

void adam_step(NetState& net, const WeightGradients& grads, const AdamParams& p) {
  if (!(p.lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
  if (!(p.beta1 >= 0.0 && p.beta1 < 1.0 && p.beta2 >= 0.0 && p.beta2 < 1.0)) {
    throw std::invalid_argument("adam_step: betas must lie in [0, 1)");
  }
  if (grads.values.size() != net.weights.size()) {
    throw std::invalid_argument("adam_step: gradient size does not match weights");
  }
  const double t = static_cast<double>(net.step_count + 1);
  const double c1 = 1.0 - std::pow(p.beta1, t);
  const double c2 = 1.0 - std::pow(p.beta2, t);
  for (std::size_t i = 0; i < net.weights.size(); ++i) {
    const double g = grads.values[i];
    net.adam_m[i] = p.beta1 * net.adam_m[i] + (1.0 - p.beta1) * g;
    net.adam_v[i] = p.beta2 * net.adam_v[i] + (1.0 - p.beta2) * g * g;
    const double m_hat = net.adam_m[i] / c1;
    const double v_hat = net.adam_v[i] / c2;
    net.weights[i] -= p.lr * m_hat / (std::sqrt(v_hat) + p.eps);
  }
  ++net.step_count;
}

namespace {
constexpr char kCheckpointMagic[] = "CSRNET01";
}

void write_checkpoint(std::ostream& out, const NetState& net) {
  using detail::put_f64;
  using detail::put_le;
  out.write(kCheckpointMagic, 8);
  put_le<std::uint64_t>(out, net.rng_seed);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const LayerSpec& l : net.layers) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.kind));
    for (int v : {l.in_channels, l.out_channels, l.kernel, l.stride, l.pad}) {
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
  }
  put_le<std::uint64_t>(out, net.weights.size());
  for (const auto* blob : {&net.weights, &net.adam_m, &net.adam_v})
    for (double v : *blob) put_f64(out, v);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(net.step_count));
}

NetState read_checkpoint(std::istream& in) {
  using detail::get_f64;
  using detail::get_le;
  detail::expect_magic(in, kCheckpointMagic);
  NetState net;
  net.rng_seed = get_le<std::uint64_t>(in);
  const auto n_layers = get_le<std::uint32_t>(in);
  if (n_layers == 0 || n_layers > 1024) throw DataError("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec l;
    const auto kind = get_le<std::uint32_t>(in);
    if (kind > static_cast<std::uint32_t>(LayerKind::head_split)) {
      throw DataError("checkpoint: unknown layer kind");
    }
    l.kind = static_cast<LayerKind>(kind);
    l.in_channels = static_cast<int>(get_le<std::uint32_t>(in));
    l.out_channels = static_cast<int>(get_le<std::uint32_t>(in));
    l.kernel = static_cast<int>(get_le<std::uint32_t>(in));
    l.stride = static_cast<int>(get_le<std::uint32_t>(in));
    l.pad = static_cast<int>(get_le<std::uint32_t>(in));
    net.layers.push_back(l);
  }
  try {
    validate_architecture(net.layers);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  const auto n_weights = get_le<std::uint64_t>(in);
  std::size_t expected = 0;
  for (const LayerSpec& l : net.layers) expected += l.param_count();
  if (n_weights != expected) throw DataError("checkpoint: weight count does not match architecture");
  for (auto* blob : {&net.weights, &net.adam_m, &net.adam_v}) {
    blob->resize(n_weights);
    for (double& v : *blob) v = get_f64(in);
  }
  net.step_count = static_cast<std::int64_t>(get_le<std::uint64_t>(in));
  if (net.step_count < 0) throw DataError("checkpoint: negative step count");
  return net;
}

void save_checkpoint(const std::string& path, const NetState& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(out, net);
  if (!out) throw IoError("failed writing " + path);
}

NetState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace csr
