#include "csr/intrinsics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace csr {

const char* to_string(LossKind kind) { return kind == LossKind::l2 ? "l2" : "distributional"; }

const char* to_string(InferenceKind kind) {
  switch (kind) {
    case InferenceKind::none: return "none";
    case InferenceKind::hard: return "hard";
    case InferenceKind::soft_learned: return "soft_learned";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "l2") return LossKind::l2;
  if (name == "distributional") return LossKind::distributional;
  throw std::invalid_argument("unknown loss '" + name + "' (expected l2 or distributional)");
}

InferenceKind parse_inference_kind(const std::string& name) {
  if (name == "none") return InferenceKind::none;
  if (name == "hard") return InferenceKind::hard;
  if (name == "soft_learned" || name == "soft") return InferenceKind::soft_learned;
  throw std::invalid_argument("unknown inference '" + name + "' (expected none, hard or soft_learned)");
}

void AblationConfig::validate() const {
  if (loss == LossKind::l2 && inference == InferenceKind::soft_learned) {
    throw std::invalid_argument("config: learned-constraint inference needs the distributional loss");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (!(lambda_reg >= 0.0)) throw std::invalid_argument("config: lambda_reg must be >= 0");
  if (!(beta >= 0.0)) throw std::invalid_argument("config: beta must be >= 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (inference_sweeps < 1) throw std::invalid_argument("config: inference_sweeps must be >= 1");
}

std::string AblationConfig::label() const {
  std::string s = loss == LossKind::l2 ? "L2 loss" : "Distr. loss";
  switch (inference) {
    case InferenceKind::none: break;
    case InferenceKind::hard: s += " + hard constr."; break;
    case InferenceKind::soft_learned: s += " + learned constr."; break;
  }
  return s;
}

bool AblationConfig::same_training(const AblationConfig& o) const {
  const bool widths_equal = widths.enc1 == o.widths.enc1 && widths.enc2 == o.widths.enc2 &&
                            widths.enc3 == o.widths.enc3 && widths.dec1 == o.widths.dec1 &&
                            widths.dec2 == o.widths.dec2;
  return loss == o.loss && family == o.family && lambda_reg == o.lambda_reg && lr == o.lr &&
         iterations == o.iterations && seed == o.seed && batch_size == o.batch_size &&
         beta == o.beta && residual_source == o.residual_source &&
         shift_constraint == o.shift_constraint && weight_decay == o.weight_decay &&
         augment == o.augment && widths_equal;
}

std::vector<AblationConfig> standard_ablation(int iterations, std::uint64_t seed) {
  std::vector<AblationConfig> rows;
  const std::pair<LossKind, InferenceKind> table[] = {
      {LossKind::l2, InferenceKind::none},
      {LossKind::l2, InferenceKind::hard},
      {LossKind::distributional, InferenceKind::none},
      {LossKind::distributional, InferenceKind::hard},
      {LossKind::distributional, InferenceKind::soft_learned},
  };
  for (const auto& [loss, inference] : table) {
    AblationConfig c;
    c.loss = loss;
    c.inference = inference;
    c.iterations = iterations;
    c.seed = seed;
    rows.push_back(c);
  }
  return rows;
}

TrainingSample make_sample(const SceneRecord& record, double epsilon) {
  TrainingSample s;
  s.id = record.id;
  s.image_log = to_log(record.scene.image, epsilon).planes();
  s.targets.albedo_log = to_log(record.scene.albedo, epsilon).planes();
  s.targets.shading_log = to_log(record.scene.shading_gray, epsilon).planes();
  s.violation_mask = record.scene.violation_mask;
  s.scene = record.scene;
  return s;
}

std::vector<TrainingSample> make_samples(const std::vector<SceneRecord>& records) {
  std::vector<TrainingSample> out;
  out.reserve(records.size());
  for (const SceneRecord& r : records) out.push_back(make_sample(r));
  return out;
}

namespace {

// Dihedral transform: bit 0 mirrors x, bit 1 mirrors y, bit 2 transposes.
PlaneTensor dihedral(const PlaneTensor& t, int code) {
  if (code == 0) return t;
  PlaneTensor out = flip(t, (code & 1) != 0, (code & 2) != 0);
  return (code & 4) != 0 ? transpose_spatial(out) : out;
}

int thread_count() {
  if (const char* env = std::getenv("CSR_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

struct SampleView {
  const PlaneTensor* image_log;
  const IntrinsicTargets* targets;
};

double sample_loss_and_gradient(const NetState& net, const SampleView& s, const AblationConfig& cfg,
                                std::vector<double>& grad_out) {
  auto [heads, cache] = forward(net, *s.image_log);
  LossEvaluation eval;
  if (cfg.loss == LossKind::l2) {
    eval = l2_training_loss(heads, *s.targets, cfg.beta);
  } else {
    LossOptions opt;
    opt.lambda_reg = cfg.lambda_reg;
    opt.family = cfg.family;
    opt.beta = cfg.beta;
    opt.residual_source = cfg.residual_source;
    opt.shift_constraint = cfg.shift_constraint;
    eval = total_training_loss(heads, *s.targets, *s.image_log, opt);
  }
  grad_out = backward(net, cache, eval.grads).values;
  return eval.value;
}

// Per-sample gradients may be computed on several threads; they are summed
// in sample order so the result does not depend on the thread count.
double mean_loss_and_gradient(const NetState& net, const std::vector<SampleView>& batch,
                              const AblationConfig& cfg, WeightGradients* grads) {
  std::vector<std::vector<double>> per_sample(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  const int threads = std::min<int>(thread_count(), static_cast<int>(batch.size()));
  auto work = [&](std::size_t first, std::size_t step) {
    for (std::size_t i = first; i < batch.size(); i += step) {
      losses[i] = sample_loss_and_gradient(net, batch[i], cfg, per_sample[i]);
    }
  };
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, static_cast<std::size_t>(t), threads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (double l : losses) loss += l * inv;
  if (grads != nullptr) {
    grads->values.assign(net.weights.size(), 0.0);
    for (const auto& g : per_sample)
      for (std::size_t k = 0; k < g.size(); ++k) grads->values[k] += g[k] * inv;
    if (cfg.weight_decay > 0.0) {
      for (std::size_t k = 0; k < net.weights.size(); ++k) {
        grads->values[k] += cfg.weight_decay * net.weights[k];
      }
    }
  }
  return loss;
}

}  // namespace

double batch_loss_and_gradient(const NetState& net, const std::vector<const TrainingSample*>& batch,
                               const AblationConfig& config, WeightGradients* grads) {
  std::vector<SampleView> views;
  for (const TrainingSample* s : batch) views.push_back({&s->image_log, &s->targets});
  return mean_loss_and_gradient(net, views, config, grads);
}

TrainedModel train(const std::vector<TrainingSample>& dataset, const AblationConfig& config,
                   const ProgressFn& progress, const NetState* initial) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  TrainedModel model;
  model.config = config;
  model.net = initial != nullptr ? *initial : init_net(desk_scale_architecture(config.widths), config.seed);

  std::mt19937_64 rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const AdamParams adam{config.lr, 0.9, 0.999, 1e-8};

  struct Augmented {
    PlaneTensor image_log;
    IntrinsicTargets targets;
  };
  std::vector<Augmented> storage(config.batch_size);
  std::vector<SampleView> views(config.batch_size);
  WeightGradients grads;

  auto draw = [&] {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t index = order[cursor++];
    const int code = config.augment ? static_cast<int>(rng() % 8) : 0;
    return std::pair{index, code};
  };
  // A resumed run replays the draws of the steps already taken, so that
  // training in two halves matches training in one go.
  for (std::int64_t k = 0; k < model.net.step_count * config.batch_size; ++k) draw();

  for (int iter = 0; iter < config.iterations; ++iter) {
    for (int b = 0; b < config.batch_size; ++b) {
      const auto [index, code] = draw();
      const TrainingSample& s = dataset[index];
      storage[b] = {dihedral(s.image_log, code),
                    {dihedral(s.targets.albedo_log, code), dihedral(s.targets.shading_log, code)}};
      views[b] = {&storage[b].image_log, &storage[b].targets};
    }
    const double loss = mean_loss_and_gradient(model.net, views, config, &grads);
    adam_step(model.net, grads, adam);
    model.loss_history.push_back(loss);
    if (progress) progress(iter, loss);
  }
  return model;
}

Decomposition decompose_full(const TrainedModel& model, const PlaneTensor& image) {
  model.config.validate();
  if (image.channels() != 3) throw std::invalid_argument("decompose: image must be RGB");
  const PlaneTensor image_log = to_log(image).planes();
  auto [heads, cache] = forward(model.net, image_log);
  Decomposition out{std::move(heads), {}};
  DecompositionResult& r = out.result;
  const HeadBundle& h = out.heads;

  if (model.config.inference == InferenceKind::none) {
    r.albedo_log = h.albedo_mean;
    r.shading_log = h.shading_mean;
    r.light_log = {0.0, 0.0, 0.0};
    r.slack = slack_map(r.albedo_log, r.shading_log, r.light_log, image_log);
    return out;
  }
  const bool unit = model.config.loss == LossKind::l2;
  const InferenceProblem problem =
      InferenceProblem::from_heads(h, image_log, model.config.family, unit);
  AlternationOptions opt;
  opt.mode = model.config.inference == InferenceKind::hard ? InferenceMode::hard : InferenceMode::soft;
  opt.max_sweeps = model.config.inference_sweeps;
  r = alternating_decompose(problem, opt);
  return out;
}

DecompositionResult decompose(const TrainedModel& model, const PlaneTensor& image) {
  return decompose_full(model, image).result;
}

PlaneTensor linear_albedo(const DecompositionResult& r) { return exp_map(r.albedo_log); }

PlaneTensor linear_shading(const DecompositionResult& r) { return exp_map(r.shading_log); }

PlaneTensor linear_color_shading(const DecompositionResult& r) {
  PlaneTensor out(r.shading_log.height(), r.shading_log.width(), 3);
  for (std::size_t p = 0; p < out.pixels(); ++p)
    for (int c = 0; c < 3; ++c) out[p * 3 + c] = std::exp(r.shading_log[p] + r.light_log[c]);
  return out;
}

namespace {

const char* const kColumnNames[] = {"mse_albedo",  "mse_shading",  "mse_avg",
                                    "lmse_albedo", "lmse_shading", "lmse_avg",
                                    "dssim_albedo", "dssim_shading", "dssim_avg"};

std::array<double, 9> row_values(const AblationRow& r) {
  return {r.albedo.mean.mse,   r.shading.mean.mse,   r.average.mse,
          r.albedo.mean.lmse,  r.shading.mean.lmse,  r.average.lmse,
          r.albedo.mean.dssim, r.shading.mean.dssim, r.average.dssim};
}

}  // namespace

std::string AblationReport::to_table() const {
  std::size_t label_width = 10;
  for (const AblationRow& r : rows) label_width = std::max(label_width, r.label.size());
  std::ostringstream out;
  char buf[64];
  out << std::string(label_width, ' ');
  for (const char* group : {"MSE", "LMSE", "DSSIM"}) {
    std::snprintf(buf, sizeof buf, " | %-29s", group);
    out << buf;
  }
  out << '\n' << std::string(label_width, ' ');
  for (int g = 0; g < 3; ++g) {
    std::snprintf(buf, sizeof buf, " | %9s%10s%10s", "Albedo", "Shading", "Avg");
    out << buf;
  }
  out << '\n';
  for (const AblationRow& r : rows) {
    out << r.label << std::string(label_width - r.label.size(), ' ');
    const auto v = row_values(r);
    for (int g = 0; g < 3; ++g) {
      std::snprintf(buf, sizeof buf, " | %8.2f%%%9.2f%%%9.2f%%", 100 * v[3 * g], 100 * v[3 * g + 1],
                    100 * v[3 * g + 2]);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

std::string AblationReport::to_delimited() const {
  std::ostringstream out;
  out << "row\tloss\tinference";
  for (const char* name : kColumnNames) out << '\t' << name;
  out << '\n';
  char buf[32];
  for (const AblationRow& r : rows) {
    if (r.reference) {
      out << r.label << "\t-\t-";
    } else {
      out << r.label << '\t' << to_string(r.config.loss) << '\t' << to_string(r.config.inference);
    }
    for (double v : row_values(r)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << '\t' << buf;
    }
    out << '\n';
  }
  return out.str();
}

void AblationRow::finalize() {
  average = {(albedo.mean.mse + shading.mean.mse) / 2, (albedo.mean.lmse + shading.mean.lmse) / 2,
             (albedo.mean.dssim + shading.mean.dssim) / 2};
}

AblationRow evaluate_model(const TrainedModel& model, const std::vector<TrainingSample>& test_set,
                           const EvaluationOptions& eval) {
  AblationRow row;
  row.label = model.config.label();
  row.config = model.config;
  for (const TrainingSample& s : test_set) {
    const DecompositionResult r = decompose(model, s.scene.image);
    row.albedo.add(evaluate_pair(linear_albedo(r), s.scene.albedo, eval));
    row.shading.add(evaluate_pair(linear_shading(r), s.scene.shading_gray, eval));
  }
  row.finalize();
  return row;
}

AblationReport run_ablation(const std::vector<TrainingSample>& train_set,
                            const std::vector<TrainingSample>& test_set,
                            const std::vector<AblationConfig>& configs, const EvaluationOptions& eval,
                            const std::function<void(const std::string&)>& log) {
  std::set<int> train_ids;
  for (const TrainingSample& s : train_set) train_ids.insert(s.id);
  for (const TrainingSample& s : test_set) {
    if (train_ids.count(s.id) != 0) {
      throw std::invalid_argument("run_ablation: scene " + std::to_string(s.id) +
                                  " appears in both train and test");
    }
  }
  if (test_set.empty()) throw std::invalid_argument("run_ablation: empty test set");
  for (const AblationConfig& c : configs) c.validate();

  std::vector<TrainedModel> trained;
  AblationReport report;
  for (const AblationConfig& cfg : configs) {
    const TrainedModel* base = nullptr;
    for (const TrainedModel& m : trained)
      if (m.config.same_training(cfg)) base = &m;
    if (base == nullptr) {
      if (log) log("training " + std::string(to_string(cfg.loss)) + " model, " +
                   std::to_string(cfg.iterations) + " iterations");
      trained.push_back(train(train_set, cfg));
      base = &trained.back();
    }
    AblationRow row = evaluate_model({base->net, cfg, {}}, test_set, eval);
    if (log) log("evaluated " + row.label);
    report.rows.push_back(std::move(row));
  }
  return report;
}

ConfidenceLocalization constraint_confidence(const NetState& net,
                                             const std::vector<TrainingSample>& samples) {
  double in_sum = 0.0;
  double out_sum = 0.0;
  std::size_t in_n = 0;
  std::size_t out_n = 0;
  for (const TrainingSample& s : samples) {
    const auto [heads, cache] = forward(net, s.image_log);
    for (std::size_t p = 0; p < s.violation_mask.pixels(); ++p) {
      const double sigma = std::exp(0.5 * heads.log_var_constraint[p]);
      if (s.violation_mask[p] > 0.5) {
        in_sum += sigma;
        ++in_n;
      } else {
        out_sum += sigma;
        ++out_n;
      }
    }
  }
  ConfidenceLocalization out;
  out.mean_sigma_inside = in_n > 0 ? in_sum / in_n : 0.0;
  out.mean_sigma_outside = out_n > 0 ? out_sum / out_n : 0.0;
  out.ratio = out.mean_sigma_outside > 0.0 ? out.mean_sigma_inside / out.mean_sigma_outside : 0.0;
  return out;
}

}  // namespace csr
