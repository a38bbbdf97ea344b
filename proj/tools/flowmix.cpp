#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowmix/augment.hpp"
#include "flowmix/config.hpp"
#include "flowmix/data.hpp"
#include "flowmix/errors.hpp"
#include "flowmix/model.hpp"
#include "flowmix/trainer.hpp"
#include "flowmix/visualize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace flowmix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitDiverged = 3;

fs::path output_root() {
  if (const char* env = std::getenv("FLOWMIX_OUTPUT_ROOT"); env != nullptr && *env != '\0') return env;
  return "flowmix_runs";
}

fs::path resolve_out(const std::string& flag, const std::string& fallback) {
  return flag.empty() ? output_root() / fallback : fs::path(flag);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::unique_ptr<ToyFlowModel> load_toy(const fs::path& path) {
  auto model = load_checkpoint(path);
  auto* toy = dynamic_cast<ToyFlowModel*>(model.get());
  if (toy == nullptr) throw ConfigError("checkpoint " + path.string() + " does not hold a trainable toy_flow model");
  model.release();
  return std::unique_ptr<ToyFlowModel>(toy);
}

struct Datasets {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> validation;
  std::vector<UnlabeledSample> unlabeled;
};

Datasets build_datasets(const ExperimentConfig& cfg, bool with_unlabeled) {
  Datasets d;
  d.train = generate_dataset(cfg.synth.train, cfg.synth.counts.train, "s");
  d.validation = generate_dataset(cfg.synth.validation, cfg.synth.counts.validation, "v");
  if (with_unlabeled && cfg.synth.counts.unlabeled > 0) {
    d.unlabeled = generate_unlabeled(cfg.synth.unlabeled, cfg.synth.counts.unlabeled, "u");
  }
  return d;
}

FlowFormat parse_flow_format(const std::string& name) {
  if (name == "flo") return FlowFormat::kFlo;
  if (name == "kitti_png") return FlowFormat::kKittiPng;
  throw ConfigError("unknown flow format '" + name + "'");
}

/// Labeled set named by `source`: a manifest for flo / kitti_png, an experiment
/// config (validation split) for synth.
std::vector<LabeledSample> load_eval_set(const std::string& source, const std::string& format) {
  if (format == "synth") {
    const auto cfg = load_experiment_config(source);
    return generate_dataset(cfg.synth.validation, cfg.synth.counts.validation, "v");
  }
  return load_dataset(source, parse_flow_format(format));
}

std::unique_ptr<FlowModel> load_for_eval(const fs::path& checkpoint, const std::vector<LabeledSample>& dataset) {
  auto model = load_checkpoint(checkpoint);
  if (auto* stub = dynamic_cast<OracleStubModel*>(model.get())) stub->bind(dataset);
  return model;
}

// --- train ----------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_train(const TrainArgs& args) {
  auto cfg = load_experiment_config(args.config);
  if (!args.mode.empty()) {
    try {
      cfg.train.mode = parse_train_mode(args.mode);
    } catch (const ContractViolation&) {
      throw ConfigError("--mode: unknown value '" + args.mode + "'");
    }
  }
  if (args.seed) cfg.train.seed = *args.seed;
  const bool semi = cfg.train.mode == TrainMode::kSemiSupervised;
  if (semi && cfg.synth.counts.unlabeled < 1) throw ConfigError("synth.counts.unlabeled: semi_supervised needs data");

  const auto out = resolve_out(args.out, "train");
  fs::create_directories(out);
  write_text(out / "config.resolved.json", to_json(cfg));

  auto data = build_datasets(cfg, semi);
  std::unique_ptr<ToyFlowModel> model;
  if (cfg.init_checkpoint) {
    model = load_toy(*cfg.init_checkpoint);
  } else {
    model = std::make_unique<ToyFlowModel>(cfg.model, derive_seed(cfg.train.seed, 3));
  }

  TrainData td;
  td.labeled = &data.train;
  td.unlabeled = semi ? &data.unlabeled : nullptr;
  td.validation = &data.validation;
  td.out_dir = out;
  auto report = train(*model, cfg.train, td);
  save_checkpoint(*model, out / "model.fmx");

  auto m = evaluate(*model, data.validation, cfg.train.iterations);
  write_text(out / "metrics.json", json{{"epe", m.epe},
                                        {"fl_all", m.fl_all},
                                        {"samples", m.samples},
                                        {"diverged", report.diverged}}
                                       .dump(2) +
                                       "\n");
  std::cout << "mode " << to_string(cfg.train.mode) << ", " << report.steps.size() << " steps, "
            << std::fixed << std::setprecision(1) << report.wall_seconds << " s\n"
            << std::setprecision(4) << "validation EPE " << m.epe << "\nvalidation Fl-all " << m.fl_all << "%\n";
  if (report.diverged) {
    std::cerr << "training diverged at step " << *report.diverged_at << ": " << report.divergence_reason << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

// --- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string format = "flo";
  int iterations = kDefaultIterations;
  std::string out;
};

int cmd_eval(const EvalArgs& args) {
  const auto dataset = load_eval_set(args.dataset, args.format);
  auto model = load_for_eval(args.checkpoint, dataset);
  const auto m = evaluate(*model, dataset, args.iterations);

  const auto out = resolve_out(args.out, "eval/per_sample.tsv");
  std::ostringstream tsv;
  tsv << "id\tepe\tfl_all\n" << std::setprecision(9);
  std::size_t k = 0;
  for (const auto& s : dataset) {
    if (s.valid.count() == 0) continue;
    tsv << s.id << '\t' << m.per_sample_epe[k] << '\t' << m.per_sample_fl_all[k] << '\n';
    ++k;
  }
  write_text(out, tsv.str());
  std::cout << std::setprecision(6) << "EPE " << m.epe << "\nFl-all " << m.fl_all << "%\n";
  return kExitOk;
}

// --- preview --------------------------------------------------------------------

struct PreviewArgs {
  std::string config;
  std::string sample;
  std::string out;
  std::string variant;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
};

int cmd_preview(const PreviewArgs& args) {
  auto cfg = load_experiment_config(args.config);
  auto augment = cfg.train.augment;
  if (!args.variant.empty()) {
    try {
      augment.variant = parse_augment_variant(args.variant);
    } catch (const ContractViolation&) {
      throw ConfigError("--variant: unknown value '" + args.variant + "'");
    }
  }
  if (args.lambda) augment.forced_lambda = *args.lambda;
  try {
    augment.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("--lambda: ") + e.what());
  }

  const auto train = generate_dataset(cfg.synth.train, cfg.synth.counts.train, "s");
  const LabeledSample* sample = nullptr;
  for (const auto& s : train) {
    if (s.id == args.sample) sample = &s;
  }
  if (sample == nullptr) {
    throw ConfigError("sample '" + args.sample + "' is not in the training split (ids s0..s" +
                      std::to_string(train.size() - 1) + ")");
  }

  const auto pool = make_frame_pool(train);
  Rng rng(derive_seed(args.seed, 6));
  const auto pair = make_distracted_pair(sample->frame1, sample->frame2, augment, pool, sample->id, rng);

  const auto out = resolve_out(args.out, "preview/" + sample->id);
  fs::create_directories(out);
  write_png_image(sample->frame1, out / "frame1.png");
  write_png_image(sample->frame2, out / "frame2.png");
  write_png_image(pair.frame1, out / "mixed1.png");
  write_png_image(pair.frame2, out / "mixed2.png");
  json sources = json::array();
  for (std::size_t k = 0; k < pair.distractors.size(); ++k) {
    write_png_image(pair.distractors[k], out / ("distractor" + std::to_string(k + 1) + ".png"));
    sources.push_back({{"sample", pair.distractor_ids[k].sample_id}, {"frame", pair.distractor_ids[k].frame_index}});
  }
  const auto vis = flow_to_color(sample->gt_flow);
  std::ostringstream mag;
  mag << std::setprecision(9) << vis.max_magnitude;
  write_png_image(vis.image, out / "gt_flow.png", {{"flowmix:normalization", "per-image max"},
                                                   {"flowmix:max_magnitude", mag.str()}});

  json info{{"sample", sample->id},
            {"variant", std::string(to_string(pair.variant))},
            {"lambda1", pair.lambda1 ? json(pair.lambda1->value()) : json(nullptr)},
            {"lambda2", pair.lambda2 ? json(pair.lambda2->value()) : json(nullptr)},
            {"distractors", sources}};
  write_text(out / "lambda.json", info.dump(2) + "\n");
  std::cout << "wrote preview of " << sample->id << " to " << out.string() << "\n";
  return kExitOk;
}

// --- calibrate ------------------------------------------------------------------

struct CalibrateArgs {
  std::string checkpoint;
  std::string dataset;
  std::string format = "flo";
  std::vector<double> thresholds{0.0, 0.37, 0.7, 0.8, 0.9, 0.95};
  int iterations = kDefaultIterations;
  std::string out;
};

int cmd_calibrate(const CalibrateArgs& args) {
  const auto dataset = load_eval_set(args.dataset, args.format);
  auto model = load_for_eval(args.checkpoint, dataset);
  std::vector<CalibrationPoint> curve;
  try {
    curve = calibrate(*model, dataset, args.thresholds, args.iterations);
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("--thresholds: ") + e.what());
  }

  std::ostringstream table;
  table << "tau\tepe\tcoverage\n" << std::setprecision(6);
  for (const auto& p : curve) {
    table << p.tau << '\t';
    if (p.epe) {
      table << *p.epe;
    } else {
      table << "nan";
    }
    table << '\t' << p.coverage << '\n';
  }
  write_text(resolve_out(args.out, "calibration.tsv"), table.str());
  std::cout << table.str();
  return kExitOk;
}

// --- ablate ---------------------------------------------------------------------

struct AblateArgs {
  std::string grid;
  std::string out;
};

int cmd_ablate(const AblateArgs& args) {
  const auto grid = load_ablation_grid(args.grid);
  const auto out = resolve_out(args.out, "ablation");
  fs::create_directories(out);

  // Cells share the data of the base config; cells that change the synthetic
  // data get their own sets.
  auto table = AblationTable{};
  for (const auto& cell : grid.cells) {
    const auto& cfg = cell.config;
    const bool semi = cfg.train.mode == TrainMode::kSemiSupervised;
    auto data = build_datasets(cfg, semi);
    write_text(out / (cell.name + ".config.json"), to_json(cfg));

    AblationCell c{cell.name, cfg.train, {}};
    if (cfg.init_checkpoint) {
      const fs::path ckpt = *cfg.init_checkpoint;
      c.init = [ckpt](std::uint64_t) { return load_toy(ckpt); };
    }
    TrainData td;
    td.labeled = &data.train;
    td.unlabeled = semi ? &data.unlabeled : nullptr;
    auto part = run_ablation({c}, grid.seeds, td, data.validation, cfg.model, [](const AblationRow& r) {
      std::cout << r.cell << " seed " << r.seed << ": ";
      if (!r.error.empty()) {
        std::cout << "failed (" << r.error << ")\n";
      } else {
        std::cout << "EPE " << r.metrics->epe << (r.diverged ? " [diverged]" : "") << "\n";
      }
    });
    for (auto& r : part.rows) table.rows.push_back(std::move(r));
    for (auto& s : part.summaries) table.summaries.push_back(std::move(s));
  }
  table.write_tsv(out / "ablation.tsv");
  std::cout << "table written to " << (out / "ablation.tsv").string() << "\n";
  return kExitOk;
}

// --- synth ----------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string split = "validation";
  std::string format = "flo";
  std::string out;
};

int cmd_synth(const SynthArgs& args) {
  const auto cfg = load_experiment_config(args.config);
  std::vector<LabeledSample> set;
  if (args.split == "train") {
    set = generate_dataset(cfg.synth.train, cfg.synth.counts.train, "s");
  } else if (args.split == "validation") {
    set = generate_dataset(cfg.synth.validation, cfg.synth.counts.validation, "v");
  } else {
    throw ConfigError("--split: expected train or validation");
  }
  const auto manifest = save_dataset(set, resolve_out(args.out, "synth/" + args.split), parse_flow_format(args.format));
  std::cout << manifest.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"flowmix: distraction augmentation and confidence-gated semi-supervised training for optical flow"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "flowmix 0.1.0");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a toy flow model from an experiment config");
  train_cmd->add_option("config", train_args.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--mode", train_args.mode, "supervised_base | supervised_distract | semi_supervised");
  train_cmd->add_option("--seed", train_args.seed, "override train.seed");
  train_cmd->add_option("--out", train_args.out, "output directory");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "EPE and Fl-all of a checkpoint on a dataset");
  eval_cmd->add_option("checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("dataset", eval_args.dataset, "manifest, or experiment config with --format synth")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--format", eval_args.format, "flo | kitti_png | synth")
      ->check(CLI::IsMember({"flo", "kitti_png", "synth"}));
  eval_cmd->add_option("--iterations", eval_args.iterations, "refinement iterations")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", eval_args.out, "per-sample metrics file (TSV)");

  PreviewArgs preview_args;
  auto* preview_cmd = app.add_subcommand("preview", "write a distracted pair and its inputs as images");
  preview_cmd->add_option("config", preview_args.config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  preview_cmd->add_option("sample", preview_args.sample, "training sample id, e.g. s0")->required();
  preview_cmd->add_option("--out", preview_args.out, "output directory");
  preview_cmd->add_option("--variant", preview_args.variant, "override augment.variant");
  preview_cmd->add_option("--lambda", preview_args.lambda, "force the mixing ratio");
  preview_cmd->add_option("--seed", preview_args.seed, "augmentation seed");

  CalibrateArgs cal_args;
  auto* cal_cmd = app.add_subcommand("calibrate", "EPE and coverage of confident pixels per threshold");
  cal_cmd->add_option("checkpoint", cal_args.checkpoint, "model checkpoint")->required();
  cal_cmd->add_option("dataset", cal_args.dataset, "manifest, or experiment config with --format synth")
      ->required()
      ->check(CLI::ExistingFile);
  cal_cmd->add_option("--format", cal_args.format, "flo | kitti_png | synth")
      ->check(CLI::IsMember({"flo", "kitti_png", "synth"}));
  cal_cmd->add_option("--thresholds", cal_args.thresholds, "ascending thresholds in [0, 1]")->delimiter(',');
  cal_cmd->add_option("--iterations", cal_args.iterations, "refinement iterations")->check(CLI::PositiveNumber);
  cal_cmd->add_option("--out", cal_args.out, "table file (TSV)");

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid over seeds");
  ablate_cmd->add_option("grid", ablate_args.grid, "ablation grid (JSON)")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", ablate_args.out, "output directory");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic split to disk with a manifest");
  synth_cmd->add_option("config", synth_args.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--split", synth_args.split, "train | validation")
      ->check(CLI::IsMember({"train", "validation"}));
  synth_cmd->add_option("--format", synth_args.format, "flo | kitti_png")->check(CLI::IsMember({"flo", "kitti_png"}));
  synth_cmd->add_option("--out", synth_args.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*preview_cmd) return cmd_preview(preview_args);
    if (*cal_cmd) return cmd_calibrate(cal_args);
    if (*ablate_cmd) return cmd_ablate(ablate_args);
    if (*synth_cmd) return cmd_synth(synth_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
