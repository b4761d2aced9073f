#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csr/inference.hpp"
#include "csr/losses.hpp"
#include "csr/metrics.hpp"
#include "csr/net.hpp"
#include "csr/synthdata.hpp"

namespace csr {

enum class LossKind { l2, distributional };
enum class InferenceKind { none, hard, soft_learned };

const char* to_string(LossKind kind);
const char* to_string(InferenceKind kind);
LossKind parse_loss_kind(const std::string& name);
InferenceKind parse_inference_kind(const std::string& name);

/// One row of the ablation: how the net is trained and how its heads are
/// turned into a decomposition.
struct AblationConfig {
  LossKind loss = LossKind::distributional;
  InferenceKind inference = InferenceKind::soft_learned;
  NoiseFamily family = NoiseFamily::gaussian;
  double lambda_reg = 1e-3;
  double lr = 1e-4;
  int iterations = 2000;
  std::uint64_t seed = 1;
  int batch_size = 4;
  double beta = 0.5;
  ResidualSource residual_source = ResidualSource::ground_truth;
  bool shift_constraint = true;
  double weight_decay = 0.0;
  bool augment = true;
  NetWidths widths;
  int inference_sweeps = 50;

  /// Rejects (l2, soft_learned) and out-of-range numbers.
  void validate() const;
  std::string label() const;
  /// True when two configs would train the same network.
  bool same_training(const AblationConfig& other) const;
};

/// The five rows of the standard ablation, sharing one schedule.
std::vector<AblationConfig> standard_ablation(int iterations, std::uint64_t seed);

/// One supervised example in log domain.
struct TrainingSample {
  int id = 0;
  PlaneTensor image_log;  // clamped log of the linear image
  IntrinsicTargets targets;
  PlaneTensor violation_mask;
  Scene scene;  // linear-domain ground truth, for evaluation
};

TrainingSample make_sample(const SceneRecord& record, double epsilon = kDefaultLogEpsilon);
std::vector<TrainingSample> make_samples(const std::vector<SceneRecord>& records);

struct TrainedModel {
  NetState net;
  AblationConfig config;
  std::vector<double> loss_history;  // mean per-image loss, one per iteration
};

/// Called after every iteration with (iteration, loss).
using ProgressFn = std::function<void(int, double)>;

/// Adam on the configured objective. Batches are drawn from a seeded
/// per-epoch shuffle; with `augment`, each image gets a seeded dihedral
/// transform. Starting from `initial` (if given) resumes its step count and
/// skips the batches already drawn, so split runs match a single run.
TrainedModel train(const std::vector<TrainingSample>& dataset, const AblationConfig& config,
                   const ProgressFn& progress = {}, const NetState* initial = nullptr);

/// Mean batch loss and gradient for one set of samples; exposed for tests.
double batch_loss_and_gradient(const NetState& net, const std::vector<const TrainingSample*>& batch,
                               const AblationConfig& config, WeightGradients* grads);

struct Decomposition {
  HeadBundle heads;
  DecompositionResult result;
};

Decomposition decompose_full(const TrainedModel& model, const PlaneTensor& image);
DecompositionResult decompose(const TrainedModel& model, const PlaneTensor& image);

/// Linear albedo exp(A) and gray shading exp(B).
PlaneTensor linear_albedo(const DecompositionResult& r);
PlaneTensor linear_shading(const DecompositionResult& r);
/// Colored shading exp(B) * exp(C), 3 channels.
PlaneTensor linear_color_shading(const DecompositionResult& r);

struct AblationRow {
  std::string label;
  AblationConfig config;
  MetricReport albedo;
  MetricReport shading;
  MetricTriple average;  // (albedo + shading) / 2
  bool reference = false;  // not produced by a model (e.g. truth vs. truth)

  /// Recomputes `average` from the albedo and shading means.
  void finalize();
};

/// Decomposes every test image with the model's inference mode and scores
/// exp(A) against the true albedo and exp(B) against the gray shading.
AblationRow evaluate_model(const TrainedModel& model, const std::vector<TrainingSample>& test_set,
                           const EvaluationOptions& eval = {});

struct AblationReport {
  std::vector<AblationRow> rows;

  /// Aligned table, percentages, columns grouped by metric as
  /// MSE(albedo shading avg) LMSE(...) DSSIM(...).
  std::string to_table() const;
  /// Tab-separated, same column order, raw values.
  std::string to_delimited() const;
};

/// Trains each distinct training setup once, decomposes the test set with
/// every row's inference mode and scores it. Train and test ids must be
/// disjoint.
AblationReport run_ablation(const std::vector<TrainingSample>& train_set,
                            const std::vector<TrainingSample>& test_set,
                            const std::vector<AblationConfig>& configs,
                            const EvaluationOptions& eval = {},
                            const std::function<void(const std::string&)>& log = {});

struct ConfidenceLocalization {
  double mean_sigma_inside = 0.0;
  double mean_sigma_outside = 0.0;
  double ratio = 0.0;
};

/// Mean predicted constraint standard deviation inside vs. outside the
/// violation masks of `samples`.
ConfidenceLocalization constraint_confidence(const NetState& net,
                                             const std::vector<TrainingSample>& samples);

}  // namespace csr
