// csr: command-line front end for data generation, training, inference,
// evaluation and gradient checking.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "csr/errors.hpp"
#include "csr/gradcheck.hpp"
#include "csr/intrinsics.hpp"
#include "csr/io.hpp"

namespace fs = std::filesystem;
using namespace csr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Thrown for semantically invalid arguments that CLI11 cannot catch.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest round-trippable rendering, in exponent form when that is shorter
// (1e-4 rather than 0.0001).
std::string format_number(double v) {
  char fixed[64];
  char sci[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(fixed, sizeof fixed, "%.*g", prec, v);
    if (std::strtod(fixed, nullptr) == v) break;
  }
  for (int prec = 0; prec <= 16; ++prec) {
    std::snprintf(sci, sizeof sci, "%.*e", prec, v);
    if (std::strtod(sci, nullptr) == v) break;
  }
  // Drop the exponent's "+" and leading zeros: 1.5e-04 -> 1.5e-4.
  std::string s = sci;
  const auto e = s.find('e');
  if (e != std::string::npos) {
    std::string mant = s.substr(0, e);
    std::string exp = s.substr(e + 1);
    const bool neg = !exp.empty() && exp[0] == '-';
    if (!exp.empty() && (exp[0] == '-' || exp[0] == '+')) exp.erase(0, 1);
    exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
    s = mant + "e" + (neg ? "-" : "") + exp;
  }
  return s.size() < std::string(fixed).size() ? s : std::string(fixed);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// ---- shared option groups --------------------------------------------------

struct ModelOptions {
  std::string loss = "distributional";
  std::string family = "gaussian";
  int sweeps = 50;

  void add(CLI::App* cmd) {
    cmd->add_option("--loss", loss, "Training loss of the checkpoint: l2 | distributional")
        ->check(CLI::IsMember({"l2", "distributional"}))
        ->capture_default_str();
    cmd->add_option("--family", family, "Constraint noise family: gaussian | laplace")
        ->check(CLI::IsMember({"gaussian", "laplace"}))
        ->capture_default_str();
    cmd->add_option("--sweeps", sweeps, "Maximum alternating-minimization sweeps")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  }

  AblationConfig config(InferenceKind inference) const {
    AblationConfig c;
    c.loss = parse_loss_kind(loss);
    c.family = parse_noise_family(family);
    c.inference = inference;
    c.inference_sweeps = sweeps;
    return c;
  }
};

// ---- gen-data --------------------------------------------------------------

struct GenDataArgs {
  int scenes = 20;
  std::uint64_t seed = 1000;
  std::string out;
  SceneSpec spec;
  bool fixed_light = false;
};

void add_gen_data(CLI::App& app, GenDataArgs& a) {
  a.spec.specular_fraction = 0.15;
  a.spec.specular_strength = 2.0;
  auto* cmd = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--scenes", a.scenes, "Number of scenes (even ids train, odd ids test)")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Base seed; scene i uses seed + i")->capture_default_str();
  cmd->add_option("--height", a.spec.height, "Scene height")->capture_default_str();
  cmd->add_option("--width", a.spec.width, "Scene width")->capture_default_str();
  cmd->add_option("--albedo-cells", a.spec.albedo_cells, "Voronoi albedo regions")->capture_default_str();
  cmd->add_option("--shading-smoothness", a.spec.shading_smoothness, "Side of the shading control grid")
      ->capture_default_str();
  cmd->add_option("--specular-fraction", a.spec.specular_fraction, "Fraction of pixels with highlights")
      ->capture_default_str();
  cmd->add_option("--specular-strength", a.spec.specular_strength, "Highlight strength relative to shading")
      ->capture_default_str();
  cmd->add_flag("--fixed-light", a.fixed_light, "White light for every scene instead of a random color");
}

int run_gen_data(const GenDataArgs& a) {
  if (a.scenes < 2) {
    std::cerr << "gen-data: need at least 2 scenes for a train/test split\n";
    return kExitData;
  }
  try {
    a.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto records = make_dataset(a.scenes, a.seed, a.spec, !a.fixed_light);
  save_dataset(a.out, records);
  std::cout << "gen-data: wrote " << records.size() << " scenes to " << a.out << "\n";
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string loss_log;
  std::string resume;
  std::string loss = "distributional";
  std::string family = "gaussian";
  std::string residual_source = "ground_truth";
  bool shift_constraint = true;
  bool augment = true;
  std::vector<int> widths{16, 32, 32, 16, 16};
  int log_every = 100;
  AblationConfig cfg;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train a decomposition network");
  cmd->add_option("--data", a.data, "Dataset directory (train split is used)")->required();
  cmd->add_option("--out", a.out, "Checkpoint to write")->required();
  cmd->add_option("--loss-log", a.loss_log, "Per-iteration loss log (default: <out>.loss.txt)");
  cmd->add_option("--resume", a.resume, "Continue from this checkpoint");
  cmd->add_option("--loss", a.loss, "l2 | distributional")
      ->check(CLI::IsMember({"l2", "distributional"}))
      ->capture_default_str();
  cmd->add_option("--family", a.family, "Constraint noise family: gaussian | laplace")
      ->check(CLI::IsMember({"gaussian", "laplace"}))
      ->capture_default_str();
  cmd->add_option("--residual-source", a.residual_source,
                  "Constraint residual from ground_truth or predicted outputs")
      ->check(CLI::IsMember({"ground_truth", "predicted"}))
      ->capture_default_str();
  cmd->add_option("--shift-constraint", a.shift_constraint, "Per-channel shift of the constraint residual")
      ->capture_default_str();
  cmd->add_option("--augment", a.augment, "Random flips and transposes")->capture_default_str();
  cmd->add_option("--lambda-reg", a.cfg.lambda_reg, "Penalty on squared log-variances")->capture_default_str();
  cmd->add_option("--lr", a.cfg.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--iterations", a.cfg.iterations, "Training iterations")->capture_default_str();
  cmd->add_option("--seed", a.cfg.seed, "Initialization and shuffling seed")->capture_default_str();
  cmd->add_option("--batch-size", a.cfg.batch_size, "Images per iteration")->capture_default_str();
  cmd->add_option("--beta", a.cfg.beta, "Regularizer of the scale-invariant shift")->capture_default_str();
  cmd->add_option("--weight-decay", a.cfg.weight_decay, "L2 weight decay")->capture_default_str();
  cmd->add_option("--widths", a.widths, "Channel widths enc1 enc2 enc3 dec1 dec2")
      ->expected(5)
      ->capture_default_str();
  cmd->add_option("--log-every", a.log_every, "Print the loss every N iterations (0: never)")
      ->capture_default_str();
}

int run_train(TrainArgs& a) {
  AblationConfig& cfg = a.cfg;
  cfg.loss = parse_loss_kind(a.loss);
  cfg.family = parse_noise_family(a.family);
  cfg.residual_source = parse_residual_source(a.residual_source);
  cfg.shift_constraint = a.shift_constraint;
  cfg.augment = a.augment;
  cfg.widths = {a.widths[0], a.widths[1], a.widths[2], a.widths[3], a.widths[4]};
  cfg.inference = InferenceKind::none;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto records = load_dataset(a.data);
  const auto samples = make_samples(select_split(records, Split::train));
  if (samples.empty()) throw DataError(a.data + ": dataset has no train scenes");

  NetState initial;
  if (!a.resume.empty()) initial = load_checkpoint(a.resume);

  std::cout << "train: loss=" << a.loss << " family=" << a.family << " lr=" << format_number(cfg.lr)
            << " iterations=" << cfg.iterations << " batch=" << cfg.batch_size << " seed=" << cfg.seed
            << " lambda_reg=" << format_number(cfg.lambda_reg) << " beta=" << format_number(cfg.beta)
            << " residual=" << a.residual_source << " scenes=" << samples.size();
  if (!a.resume.empty()) std::cout << " resume=" << a.resume << " step=" << initial.step_count;
  std::cout << "\n";

  auto progress = [&](int iter, double loss) {
    if (a.log_every > 0 && ((iter + 1) % a.log_every == 0 || iter + 1 == cfg.iterations)) {
      std::printf("iter %6d  loss %.6f\n", iter + 1, loss);
      std::fflush(stdout);
    }
  };
  const TrainedModel model = train(samples, cfg, progress, a.resume.empty() ? nullptr : &initial);

  save_checkpoint(a.out, model.net);
  std::string log;
  char buf[40];
  for (double v : model.loss_history) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    log += buf;
  }
  write_text(a.loss_log.empty() ? a.out + ".loss.txt" : a.loss_log, log);
  std::cout << "train: wrote " << a.out << " (step " << model.net.step_count << ")\n";
  return kExitOk;
}

// ---- infer -----------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
  std::string mode = "soft";
  ModelOptions model;
};

void add_infer(CLI::App& app, InferArgs& a) {
  auto* cmd = app.add_subcommand("infer", "Decompose one image with a trained network");
  cmd->add_option("--checkpoint", a.checkpoint, "Trained checkpoint")->required();
  cmd->add_option("--image", a.image, "Linear RGB image in raw float format")->required();
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--mode", a.mode, "none | hard | soft")
      ->check(CLI::IsMember({"none", "hard", "soft"}))
      ->capture_default_str();
  a.model.add(cmd);
}

void save_both(const fs::path& dir, const std::string& name, const PlaneTensor& t, double png_scale = 1.0) {
  save_raw(dir / (name + ".csrf"), t);
  save_png(dir / (name + ".png"), t, png_scale);
}

double max_value(const PlaneTensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, v);
  return m;
}

PlaneTensor sigma_map(const PlaneTensor& log_var) {
  PlaneTensor s = log_var;
  for (double& v : s.data()) v = std::exp(0.5 * v);
  return s;
}

int run_infer(const InferArgs& a) {
  const NetState net = load_checkpoint(a.checkpoint);
  const PlaneTensor image = load_raw(a.image);
  if (image.channels() != 3) throw DataError(a.image + ": expected an RGB image");
  for (double v : image.data()) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DataError(a.image + ": pixel values must be finite and >= 0");
  }
  const int div = net.spatial_divisor();
  if (image.height() % div != 0 || image.width() % div != 0) {
    throw UsageError("infer: image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                     "; height and width must be divisible by " + std::to_string(div));
  }
  const InferenceKind kind = parse_inference_kind(a.mode);
  const TrainedModel model{net, a.model.config(kind), {}};
  if (model.config.loss == LossKind::l2 && kind == InferenceKind::soft_learned) {
    throw UsageError("infer: soft mode needs a distributional model");
  }
  const Decomposition d = decompose_full(model, image);
  const DecompositionResult& r = d.result;

  const fs::path dir = a.out;
  ensure_dir(dir);
  save_raw(dir / "albedo_log.csrf", r.albedo_log);
  save_raw(dir / "shading_log.csrf", r.shading_log);
  save_both(dir, "albedo", linear_albedo(r));
  save_both(dir, "shading", linear_shading(r));
  save_both(dir, "color_shading", linear_color_shading(r));
  PlaneTensor recon(image.height(), image.width(), 3);
  for (std::size_t p = 0; p < recon.pixels(); ++p)
    for (int c = 0; c < 3; ++c)
      recon[p * 3 + c] = std::exp(r.albedo_log[p * 3 + c] + r.shading_log[p] + r.light_log[c]);
  save_both(dir, "reconstruction", recon);

  save_raw(dir / "slack.csrf", r.slack);
  PlaneTensor slack_mag(image.height(), image.width(), 1);
  for (std::size_t p = 0; p < slack_mag.pixels(); ++p) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += r.slack[p * 3 + c] * r.slack[p * 3 + c];
    slack_mag[p] = std::sqrt(s);
  }
  const double slack_max = max_value(slack_mag);
  save_png(dir / "slack_magnitude.png", slack_mag, slack_max > 0.0 ? 1.0 / slack_max : 1.0);

  for (const auto& [name, log_var] : {std::pair{"sigma_albedo", &d.heads.log_var_albedo},
                                      std::pair{"sigma_shading", &d.heads.log_var_shading},
                                      std::pair{"sigma_constraint", &d.heads.log_var_constraint}}) {
    const PlaneTensor s = sigma_map(*log_var);
    const double m = max_value(s);
    save_both(dir, name, s, m > 0.0 ? 1.0 / m : 1.0);
  }

  std::printf("infer: mode=%s\n", a.mode.c_str());
  std::printf("light color (log):    %.9f %.9f %.9f\n", r.light_log[0], r.light_log[1], r.light_log[2]);
  std::printf("light color (linear): %.9f %.9f %.9f\n", std::exp(r.light_log[0]), std::exp(r.light_log[1]),
              std::exp(r.light_log[2]));
  if (!r.objective_trace.empty()) {
    std::printf("objective: %.17g after %d sweeps\n", r.objective_trace.back(), r.sweeps);
  }
  std::printf("infer: wrote %s\n", a.out.c_str());
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string l2_checkpoint;
  std::string distr_checkpoint;
  std::vector<std::string> rows;
  bool truth = false;
  std::string out;
  std::string tsv;
  int lmse_window = 0;
  int lmse_stride = 0;
  std::string family = "gaussian";
  int sweeps = 50;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Score checkpoints on the test split (ablation report)");
  cmd->add_option("--data", a.data, "Dataset directory")->required();
  cmd->add_option("--l2-checkpoint", a.l2_checkpoint, "Checkpoint trained with the L2 loss");
  cmd->add_option("--distr-checkpoint", a.distr_checkpoint, "Checkpoint trained with the distributional loss");
  cmd->add_option("--rows", a.rows,
                  "Rows as loss:inference, e.g. l2:none distributional:soft "
                  "(default: every row the given checkpoints allow)")
      ->delimiter(',');
  cmd->add_flag("--truth", a.truth, "Add a reference row scoring the ground truth against itself");
  cmd->add_option("--out", a.out, "Write the aligned table here as well as to stdout");
  cmd->add_option("--tsv", a.tsv, "Machine-readable tab-separated report");
  cmd->add_option("--lmse-window", a.lmse_window, "LMSE window (0: 10% of the larger side)")->capture_default_str();
  cmd->add_option("--lmse-stride", a.lmse_stride, "LMSE stride (0: half the window)")->capture_default_str();
  cmd->add_option("--family", a.family, "Constraint noise family of the distributional model")
      ->check(CLI::IsMember({"gaussian", "laplace"}))
      ->capture_default_str();
  cmd->add_option("--sweeps", a.sweeps, "Maximum alternating-minimization sweeps")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

int run_eval(const EvalArgs& a) {
  struct RowRequest {
    LossKind loss;
    InferenceKind inference;
  };
  std::vector<RowRequest> requests;
  if (a.rows.empty()) {
    for (const AblationConfig& c : standard_ablation(0, 1)) {
      const bool have = c.loss == LossKind::l2 ? !a.l2_checkpoint.empty() : !a.distr_checkpoint.empty();
      if (have) requests.push_back({c.loss, c.inference});
    }
  } else {
    for (const std::string& spec : a.rows) {
      const auto colon = spec.find(':');
      if (colon == std::string::npos) throw UsageError("eval: row '" + spec + "' is not loss:inference");
      try {
        requests.push_back({parse_loss_kind(spec.substr(0, colon)), parse_inference_kind(spec.substr(colon + 1))});
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("eval: ") + e.what());
      }
    }
  }
  if (requests.empty() && !a.truth) throw UsageError("eval: nothing to evaluate; pass a checkpoint or --truth");
  for (const RowRequest& r : requests) {
    const std::string& path = r.loss == LossKind::l2 ? a.l2_checkpoint : a.distr_checkpoint;
    if (path.empty()) {
      throw UsageError(std::string("eval: row needs --") + (r.loss == LossKind::l2 ? "l2" : "distr") +
                       "-checkpoint");
    }
    if (r.loss == LossKind::l2 && r.inference == InferenceKind::soft_learned) {
      throw UsageError("eval: l2:soft is not a valid row");
    }
  }

  const auto records = load_dataset(a.data);
  const auto test = make_samples(select_split(records, Split::test));
  if (test.empty()) throw DataError(a.data + ": dataset has no test scenes");
  EvaluationOptions eval;
  eval.lmse_window = a.lmse_window;
  eval.lmse_stride = a.lmse_stride;

  NetState l2_net;
  NetState distr_net;
  if (!a.l2_checkpoint.empty()) l2_net = load_checkpoint(a.l2_checkpoint);
  if (!a.distr_checkpoint.empty()) distr_net = load_checkpoint(a.distr_checkpoint);

  AblationReport report;
  if (a.truth) {
    AblationRow row;
    row.label = "Ground truth";
    row.reference = true;
    for (const TrainingSample& s : test) {
      row.albedo.add(evaluate_pair(s.scene.albedo, s.scene.albedo, eval));
      row.shading.add(evaluate_pair(s.scene.shading_gray, s.scene.shading_gray, eval));
    }
    row.finalize();
    report.rows.push_back(std::move(row));
  }
  for (const RowRequest& r : requests) {
    AblationConfig cfg;
    cfg.loss = r.loss;
    cfg.inference = r.inference;
    cfg.family = parse_noise_family(a.family);
    cfg.inference_sweeps = a.sweeps;
    const NetState& net = r.loss == LossKind::l2 ? l2_net : distr_net;
    report.rows.push_back(evaluate_model({net, cfg, {}}, test, eval));
  }

  const std::string table = report.to_table();
  std::cout << table;
  if (!a.out.empty()) write_text(a.out, table);
  if (!a.tsv.empty()) write_text(a.tsv, report.to_delimited());
  return kExitOk;
}

// ---- gradcheck -------------------------------------------------------------

void add_gradcheck(CLI::App& app, GradcheckOptions& o) {
  auto* cmd = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
  cmd->add_option("--instances", o.instances, "Random micro-instances per suite")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "Seed of the micro-instances")->capture_default_str();
  cmd->add_option("--tolerance", o.tolerance, "Maximum relative error")->capture_default_str();
  cmd->add_option("--inject-fault", o.inject_fault,
                  "Test hook: negate the analytic gradient of this suite ('all' for every suite)");
}

int run_gradcheck_cmd(const GradcheckOptions& o) {
  GradcheckReport report;
  try {
    report = run_gradcheck(o);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::cout << report.to_text();
  if (report.passed()) {
    std::cout << "gradcheck: all suites pass\n";
    return kExitOk;
  }
  const SuiteResult& w = report.worst_suite();
  std::cout << "gradcheck: FAILED; worst offender " << w.name << ": " << w.worst << "\n";
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained intrinsic decomposition with learned confidences"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --config follow the subcommand
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "INI file with [gen-data], [train], [infer], [eval] sections");

  GenDataArgs gen;
  TrainArgs tr;
  InferArgs inf;
  EvalArgs ev;
  GradcheckOptions gc;
  add_gen_data(app, gen);
  add_train(app, tr);
  add_infer(app, inf);
  add_eval(app, ev);
  add_gradcheck(app, gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand("gen-data")) return run_gen_data(gen);
    if (app.got_subcommand("train")) return run_train(tr);
    if (app.got_subcommand("infer")) return run_infer(inf);
    if (app.got_subcommand("eval")) return run_eval(ev);
    if (app.got_subcommand("gradcheck")) return run_gradcheck_cmd(gc);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
