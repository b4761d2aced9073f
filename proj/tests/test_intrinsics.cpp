#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <cstdlib>
#include <set>
#include <stdexcept>

#include "csr/intrinsics.hpp"
#include "test_util.hpp"

using namespace csr;

namespace {

std::vector<SceneRecord> small_dataset(int n, int size = 16) {
  SceneSpec t;
  t.height = size;
  t.width = size;
  t.albedo_cells = 6;
  t.specular_fraction = 0.15;
  t.specular_strength = 2.0;
  return make_dataset(n, 300, t);
}

// Bias of the log-variance-of-constraint head in the final 1x1 conv.
std::size_t constraint_bias_index(const NetState& net) {
  const auto offsets = net.offsets();
  std::size_t i = net.layers.size();
  while (!net.layers[--i].has_weights()) {
  }
  return offsets[i] + net.layers[i].weight_count() + 6;
}

AblationConfig quick_config(int iterations) {
  AblationConfig c;
  c.iterations = iterations;
  c.seed = 3;
  c.batch_size = 2;
  c.widths = {4, 4, 4, 4, 4};
  return c;
}

}  // namespace

TEST_SUITE("intrinsics") {
  TEST_CASE("config validation and labels") {
    AblationConfig c;
    c.loss = LossKind::l2;
    c.inference = InferenceKind::soft_learned;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.inference = InferenceKind::hard;
    CHECK_NOTHROW(c.validate());
    CHECK(c.label() == "L2 loss + hard constr.");
    c = AblationConfig{};
    c.lr = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = AblationConfig{};
    c.iterations = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(parse_loss_kind("l2") == LossKind::l2);
    CHECK(parse_inference_kind("soft_learned") == InferenceKind::soft_learned);
    CHECK_THROWS_AS(parse_loss_kind("l1"), std::invalid_argument);
  }

  TEST_CASE("standard ablation has five rows sharing two trainings") {
    const auto rows = standard_ablation(100, 9);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].label() == "L2 loss");
    CHECK(rows[1].label() == "L2 loss + hard constr.");
    CHECK(rows[2].label() == "Distr. loss");
    CHECK(rows[3].label() == "Distr. loss + hard constr.");
    CHECK(rows[4].label() == "Distr. loss + learned constr.");
    CHECK(rows[0].same_training(rows[1]));
    CHECK(rows[2].same_training(rows[4]));
    CHECK_FALSE(rows[0].same_training(rows[2]));
    for (const auto& r : rows) {
      CHECK(r.iterations == 100);
      CHECK(r.seed == 9);
      CHECK(r.lr == 1e-4);
    }
  }

  TEST_CASE("zero iterations returns the initialization") {
    const auto samples = make_samples(select_split(small_dataset(4), Split::train));
    const AblationConfig c = quick_config(0);
    const TrainedModel m = train(samples, c);
    CHECK(m.net == init_net(desk_scale_architecture(c.widths), c.seed));
    CHECK(m.loss_history.empty());
  }

  TEST_CASE("training is deterministic and records every iteration") {
    const auto samples = make_samples(select_split(small_dataset(4), Split::train));
    const AblationConfig c = quick_config(5);
    const TrainedModel a = train(samples, c);
    const TrainedModel b = train(samples, c);
    CHECK(a.net == b.net);
    CHECK(a.loss_history == b.loss_history);
    CHECK(a.loss_history.size() == 5);
    CHECK(a.net.step_count == 5);
  }

  TEST_CASE("resumed training matches one run bit for bit") {
    const auto samples = make_samples(select_split(small_dataset(6), Split::train));
    AblationConfig c = quick_config(6);
    const TrainedModel whole = train(samples, c);
    c.iterations = 3;
    const TrainedModel first = train(samples, c);
    const TrainedModel second = train(samples, c, {}, &first.net);
    CHECK(second.net == whole.net);
    for (int i = 0; i < 3; ++i) {
      CHECK(first.loss_history[i] == whole.loss_history[i]);
      CHECK(second.loss_history[i] == whole.loss_history[i + 3]);
    }
  }

  TEST_CASE("thread count does not change the result") {
    const auto samples = make_samples(select_split(small_dataset(6), Split::train));
    AblationConfig c = quick_config(3);
    c.batch_size = 3;
    setenv("CSR_THREADS", "1", 1);
    const TrainedModel one = train(samples, c);
    setenv("CSR_THREADS", "3", 1);
    const TrainedModel three = train(samples, c);
    unsetenv("CSR_THREADS");
    CHECK(one.net == three.net);
    CHECK(one.loss_history == three.loss_history);
  }

  TEST_CASE("batch gradient is the mean of single-sample gradients") {
    const auto samples = make_samples(select_split(small_dataset(4), Split::train));
    const AblationConfig c = quick_config(0);
    const NetState net = init_net(desk_scale_architecture(c.widths), 11);
    WeightGradients g01, g0, g1;
    const double l01 = batch_loss_and_gradient(net, {&samples[0], &samples[1]}, c, &g01);
    const double l0 = batch_loss_and_gradient(net, {&samples[0]}, c, &g0);
    const double l1 = batch_loss_and_gradient(net, {&samples[1]}, c, &g1);
    CHECK(l01 == doctest::Approx((l0 + l1) / 2).epsilon(1e-13));
    double worst = 0;
    for (std::size_t k = 0; k < g01.values.size(); ++k)
      worst = std::max(worst, std::abs(g01.values[k] - (g0.values[k] + g1.values[k]) / 2));
    CHECK(worst < 1e-10);
  }

  TEST_CASE("decompose follows the inference mode") {
    const auto records = small_dataset(2);
    const TrainingSample s = make_sample(records[0]);
    TrainedModel m;
    m.config = quick_config(0);
    m.net = init_net(desk_scale_architecture(m.config.widths), 5);
    const PlaneTensor image_log = to_log(s.scene.image).planes();

    m.config.inference = InferenceKind::none;
    const Decomposition none = decompose_full(m, s.scene.image);
    CHECK(none.result.albedo_log == none.heads.albedo_mean);
    CHECK(none.result.shading_log == none.heads.shading_mean);

    m.config.inference = InferenceKind::hard;
    const DecompositionResult hard = decompose(m, s.scene.image);
    double gap = 0;
    for (std::size_t p = 0; p < image_log.pixels(); ++p)
      for (int c = 0; c < 3; ++c)
        gap = std::max(gap, std::abs(hard.albedo_log[p * 3 + c] + hard.shading_log[p] +
                                     hard.light_log[c] - image_log[p * 3 + c]));
    CHECK(gap < 1e-8);

    // A very unconfident constraint head leaves the predictions alone.
    m.config.inference = InferenceKind::soft_learned;
    m.net.weights[constraint_bias_index(m.net)] = 20.0;
    const Decomposition soft = decompose_full(m, s.scene.image);
    CHECK(csr::testing::max_abs(soft.result.albedo_log, soft.heads.albedo_mean) < 1e-3);
    CHECK(csr::testing::max_abs(soft.result.shading_log, soft.heads.shading_mean) < 1e-3);
  }

  TEST_CASE("decompose is deterministic") {
    const auto records = small_dataset(2);
    TrainedModel m;
    m.config = quick_config(0);
    m.net = init_net(desk_scale_architecture(m.config.widths), 6);
    const DecompositionResult a = decompose(m, records[1].scene.image);
    const DecompositionResult b = decompose(m, records[1].scene.image);
    CHECK(a.albedo_log == b.albedo_log);
    CHECK(a.shading_log == b.shading_log);
    CHECK(a.light_log == b.light_log);
  }

  TEST_CASE("ablation rejects overlapping splits and is reproducible") {
    const auto samples = make_samples(small_dataset(4));
    const auto train_set = make_samples(select_split(small_dataset(4), Split::train));
    const auto test_set = make_samples(select_split(small_dataset(4), Split::test));
    std::vector<AblationConfig> cfgs = standard_ablation(2, 4);
    for (auto& c : cfgs) {
      c.widths = {4, 4, 4, 4, 4};
      c.batch_size = 2;
    }
    CHECK_THROWS_AS(run_ablation(samples, test_set, cfgs), std::invalid_argument);

    const AblationReport a = run_ablation(train_set, test_set, cfgs);
    const AblationReport b = run_ablation(train_set, test_set, cfgs);
    REQUIRE(a.rows.size() == 5);
    CHECK(a.to_delimited() == b.to_delimited());
    // Rows sharing a network and inference mode agree.
    CHECK(a.rows[0].albedo.mean.mse != a.rows[1].albedo.mean.mse);
    for (const AblationRow& r : a.rows) {
      CHECK(r.albedo.per_image.size() == test_set.size());
      CHECK(r.average.mse == doctest::Approx((r.albedo.mean.mse + r.shading.mean.mse) / 2));
    }
    const std::string tsv = a.to_delimited();
    std::size_t header_end = tsv.find('\n');
    const std::string header = tsv.substr(0, header_end);
    CHECK(std::count(header.begin(), header.end(), '\t') == 11);
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 6);
  }

  TEST_CASE("confidence localization on a hand-set constraint head") {
    const auto samples = make_samples(select_split(small_dataset(4), Split::test));
    NetState net = init_net(desk_scale_architecture({4, 4, 4, 4, 4}), 2);
    // Zero weights: every head is its bias, so sigma is the same everywhere.
    std::fill(net.weights.begin(), net.weights.end(), 0.0);
    net.weights[constraint_bias_index(net)] = std::log(4.0);
    const ConfidenceLocalization loc = constraint_confidence(net, samples);
    CHECK(loc.mean_sigma_inside == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(loc.mean_sigma_outside == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(loc.ratio == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("training lowers the loss") {
    SceneSpec t;
    t.specular_fraction = 0.15;
    t.specular_strength = 2.0;
    const auto samples = make_samples(make_dataset(20, 50, t));
    AblationConfig c;
    c.iterations = 2000;
    c.seed = 1;
    const TrainedModel m = train(samples, c);
    auto window_mean = [&](std::size_t from) {
      double s = 0;
      for (std::size_t i = from; i < from + 50; ++i) s += m.loss_history[i];
      return s / 50;
    };
    CHECK(window_mean(m.loss_history.size() - 50) < window_mean(0));
    CHECK(m.loss_history.back() < m.loss_history.front());
  }
}
