#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "csr/errors.hpp"
#include "csr/gradcheck.hpp"
#include "csr/net.hpp"
#include "test_util.hpp"

using namespace csr;
using csr::testing::random_tensor;

namespace {

NetState small_net(std::uint64_t seed) { return init_net(desk_scale_architecture({4, 4, 4, 4, 4}), seed); }

bool all_zero(const PlaneTensor& t) {
  for (double v : t.data())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST_SUITE("net") {
  TEST_CASE("desk-scale architecture and parameter count") {
    const auto layers = desk_scale_architecture();
    REQUIRE(layers.size() == 12);
    CHECK(layers.front().kind == LayerKind::conv);
    CHECK(layers.back().kind == LayerKind::head_split);
    // conv3 3->16, conv3 16->32, conv3 32->32, tconv4 32->16, tconv4 16->16, conv1 16->7
    const std::size_t expected = (9 * 3 * 16 + 16) + (9 * 16 * 32 + 32) + (9 * 32 * 32 + 32) +
                                 (16 * 32 * 16 + 16) + (16 * 16 * 16 + 16) + (16 * 7 + 7);
    std::size_t total = 0;
    for (const LayerSpec& l : layers) total += l.param_count();
    CHECK(total == expected);
    CHECK(init_net(layers, 1).weights.size() == expected);
  }

  TEST_CASE("architecture validation") {
    auto layers = desk_scale_architecture();
    CHECK_NOTHROW(validate_architecture(layers));
    layers[2].in_channels = 5;
    CHECK_THROWS_AS(validate_architecture(layers), std::invalid_argument);
    layers = desk_scale_architecture();
    layers[0].stride = 3;
    CHECK_THROWS_AS(validate_architecture(layers), std::invalid_argument);
    layers = desk_scale_architecture();
    layers.pop_back();
    CHECK_THROWS_AS(validate_architecture(layers), std::invalid_argument);
  }

  TEST_CASE("init is seeded Glorot-uniform with zero biases") {
    const NetState a = init_net(desk_scale_architecture(), 5);
    const NetState b = init_net(desk_scale_architecture(), 5);
    const NetState c = init_net(desk_scale_architecture(), 6);
    CHECK(a == b);
    CHECK(a.weights != c.weights);
    const auto off = a.offsets();
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const LayerSpec& l = a.layers[i];
      if (!l.has_weights()) continue;
      const double fan_in = l.in_channels * l.kernel * l.kernel;
      const double fan_out = l.out_channels * l.kernel * l.kernel;
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (std::size_t k = 0; k < l.weight_count(); ++k) CHECK(std::abs(a.weights[off[i] + k]) <= bound);
      for (std::size_t k = 0; k < l.bias_count(); ++k) CHECK(a.weights[off[i] + l.weight_count() + k] == 0.0);
    }
    CHECK(a.step_count == 0);
    CHECK(a.adam_m.size() == a.weights.size());
    CHECK(a.adam_v.size() == a.weights.size());
  }

  TEST_CASE("zero weights give zero heads") {
    NetState net = init_net(desk_scale_architecture(), 3);
    std::fill(net.weights.begin(), net.weights.end(), 0.0);
    const auto [heads, cache] = forward(net, random_tensor(1, 8, 8, 3, -3, 0));
    CHECK(all_zero(heads.pack()));
  }

  TEST_CASE("heads have the input resolution") {
    const NetState net = init_net(desk_scale_architecture(), 3);
    const auto [heads, cache] = forward(net, to_log(random_tensor(2, 32, 32, 3, 0.01, 1)));
    CHECK(heads.albedo_mean.height() == 32);
    CHECK(heads.albedo_mean.width() == 32);
    CHECK(heads.albedo_mean.channels() == 3);
    CHECK(heads.shading_mean.channels() == 1);
    CHECK(heads.log_var_constraint.same_shape(heads.shading_mean));
    const auto [h2, c2] = forward(net, random_tensor(2, 12, 20, 3, -1, 0));
    CHECK(h2.albedo_mean.height() == 12);
    CHECK(h2.albedo_mean.width() == 20);
  }

  TEST_CASE("forward is deterministic") {
    const NetState net = small_net(4);
    const PlaneTensor x = random_tensor(5, 16, 16, 3, -2, 0);
    CHECK(forward(net, x).first.pack() == forward(net, x).first.pack());
  }

  TEST_CASE("forward rejects bad input") {
    const NetState net = small_net(4);
    CHECK_THROWS_AS(forward(net, PlaneTensor(10, 8, 3)), std::invalid_argument);
    CHECK_THROWS_AS(forward(net, PlaneTensor(8, 8, 1)), std::invalid_argument);
  }

  TEST_CASE("zero head gradients give zero weight gradients") {
    const NetState net = small_net(7);
    const auto [heads, cache] = forward(net, random_tensor(8, 8, 8, 3, -2, 0));
    PlaneTensor gin;
    const WeightGradients g = backward(net, cache, HeadBundle::zeros(8, 8), &gin);
    for (double v : g.values) CHECK(v == 0.0);
    CHECK(all_zero(gin));
  }

  TEST_CASE("stale cache is a state error") {
    NetState net = small_net(7);
    const auto [heads, cache] = forward(net, random_tensor(8, 8, 8, 3, -2, 0));
    WeightGradients g;
    g.values.assign(net.weights.size(), 0.1);
    adam_step(net, g, {});
    CHECK_THROWS_AS(backward(net, cache, HeadBundle::zeros(8, 8)), std::logic_error);
  }

  TEST_CASE("relu uses subgradient 0 at 0") {
    const LayerSpec relu{LayerKind::relu, 1, 1, 1, 1, 0};
    const PlaneTensor in(1, 3, 1, std::vector<double>{-1.0, 0.0, 2.0});
    const PlaneTensor gout(1, 3, 1, 1.0);
    std::vector<double> none;
    const PlaneTensor gin = layer_backward(relu, {}, in, gout, none);
    CHECK(gin[0] == 0.0);
    CHECK(gin[1] == 0.0);
    CHECK(gin[2] == 1.0);
    CHECK(layer_forward(relu, {}, in)[0] == 0.0);
  }

  TEST_CASE("layer and micro-net gradients match finite differences") {
    GradcheckOptions opt;
    const GradcheckReport r = run_gradcheck(opt);
    for (const char* name : {"layer_conv", "layer_transposed_conv", "layer_relu", "layer_head_split", "micro_net"}) {
      const auto it = std::find_if(r.suites.begin(), r.suites.end(), [&](const SuiteResult& s) { return s.name == name; });
      REQUIRE(it != r.suites.end());
      INFO(name << " worst: " << it->worst);
      CHECK(it->instances >= 20);
      CHECK(it->max_rel_error < 1e-4);
    }
  }

  TEST_CASE("adam: single weight worked example") {
    NetState net;
    net.layers = {};
    net.weights = {0.0};
    net.adam_m = {0.0};
    net.adam_v = {0.0};
    adam_step(net, {{1.0}}, {0.1, 0.9, 0.999, 1e-8});
    // m_hat = 1, v_hat = 1: w = -0.1 / (1 + 1e-8)
    CHECK(net.weights[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(net.step_count == 1);
  }

  TEST_CASE("adam: zero gradients leave weights unchanged") {
    NetState net = small_net(9);
    const auto before = net.weights;
    WeightGradients g;
    g.values.assign(net.weights.size(), 0.0);
    adam_step(net, g, {});
    CHECK(net.weights == before);
    CHECK(net.step_count == 1);
  }

  TEST_CASE("adam: argument errors") {
    NetState net = small_net(9);
    WeightGradients g;
    g.values.assign(net.weights.size() - 1, 0.0);
    CHECK_THROWS_AS(adam_step(net, g, {}), std::invalid_argument);
    g.values.assign(net.weights.size(), 0.0);
    CHECK_THROWS_AS(adam_step(net, g, {0.0, 0.9, 0.999, 1e-8}), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(net, g, {1e-3, 1.0, 0.999, 1e-8}), std::invalid_argument);
  }

  TEST_CASE("adam: identical runs give identical trajectories") {
    auto run = [] {
      NetState net = small_net(10);
      const PlaneTensor x = random_tensor(11, 8, 8, 3, -2, 0);
      for (int i = 0; i < 3; ++i) {
        const auto [heads, cache] = forward(net, x);
        adam_step(net, backward(net, cache, heads), {});
      }
      return net;
    };
    CHECK(run() == run());
  }

  TEST_CASE("head bundle pack/unpack") {
    const PlaneTensor packed = random_tensor(12, 4, 4, kHeadChannels, -1, 1);
    const HeadBundle h = HeadBundle::unpack(packed);
    CHECK(h.albedo_mean(2, 3, 2) == packed(2, 3, 2));
    CHECK(h.shading_mean(2, 3, 0) == packed(2, 3, 3));
    CHECK(h.log_var_albedo(2, 3, 0) == packed(2, 3, 4));
    CHECK(h.log_var_shading(2, 3, 0) == packed(2, 3, 5));
    CHECK(h.log_var_constraint(2, 3, 0) == packed(2, 3, 6));
    CHECK(h.pack() == packed);
  }

  TEST_CASE("checkpoint round trip is bit exact") {
    NetState net = small_net(13);
    WeightGradients g;
    g.values.assign(net.weights.size(), 0.25);
    adam_step(net, g, {});
    std::stringstream buf;
    write_checkpoint(buf, net);
    CHECK(buf.str().substr(0, 8) == "CSRNET01");
    CHECK(read_checkpoint(buf) == net);
  }

  TEST_CASE("corrupt checkpoints are data errors") {
    std::stringstream bad("NOTANET0........");
    CHECK_THROWS_AS(read_checkpoint(bad), DataError);
    std::stringstream full;
    write_checkpoint(full, small_net(1));
    const std::string bytes = full.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(read_checkpoint(truncated), DataError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ck.bin"), IoError);
  }
}
