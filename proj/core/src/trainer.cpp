#include "flowmix/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "flowmix/errors.hpp"
#include "flowmix/tensor_bridge.hpp"

namespace flowmix {

using json = nlohmann::json;

std::string_view to_string(TrainMode mode) noexcept {
  switch (mode) {
    case TrainMode::kSupervisedBase: return "supervised_base";
    case TrainMode::kSupervisedDistract: return "supervised_distract";
    case TrainMode::kSemiSupervised: return "semi_supervised";
  }
  return "supervised_base";
}

TrainMode parse_train_mode(std::string_view name) {
  for (auto m : {TrainMode::kSupervisedBase, TrainMode::kSupervisedDistract, TrainMode::kSemiSupervised}) {
    if (to_string(m) == name) return m;
  }
  throw ContractViolation("unknown training mode '" + std::string(name) + "'");
}

double LrSchedule::at(int step, int total_steps) const {
  const double start = max_lr / 25.0;
  const double end = start / 1e4;
  const int warmup = static_cast<int>(std::lround(warmup_fraction * total_steps));
  if (step < warmup) {
    return start + (max_lr - start) * step / static_cast<double>(warmup);
  }
  const double frac = (step - warmup) / static_cast<double>(std::max(1, total_steps - warmup));
  return max_lr + (end - max_lr) * std::min(1.0, frac);
}

void TrainConfig::validate() const {
  if (steps < 1) throw ContractViolation("steps must be positive");
  if (batch_size < 1) throw ContractViolation("batch_size must be positive");
  if (iterations < 1) throw ContractViolation("iterations must be positive");
  if (!(lr.max_lr > 0.0)) throw ContractViolation("max_lr must be positive");
  if (!(lr.warmup_fraction >= 0.0 && lr.warmup_fraction < 1.0)) {
    throw ContractViolation("warmup_fraction must lie in [0, 1)");
  }
  if (!(lr.weight_decay >= 0.0)) throw ContractViolation("weight_decay must be non-negative");
  if (!(lr.epsilon > 0.0)) throw ContractViolation("epsilon must be positive");
  if (!(lr.clip_norm > 0.0)) throw ContractViolation("clip_norm must be positive");
  if (!(divergence.factor > 1.0)) throw ContractViolation("divergence factor must exceed 1");
  if (divergence.window < 1 || divergence.min_history < 1) {
    throw ContractViolation("divergence window and min_history must be positive");
  }
  if (eval_every < 0 || checkpoint_every < 0) throw ContractViolation("cadences must be non-negative");
  for (double t : coverage_probe_taus) {
    if (!(t >= 0.0 && t <= 1.0)) throw ContractViolation("probe tau must lie in [0, 1]");
  }
  augment.validate();
  loss.validate();
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractViolation("median of an empty set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double pair_weight(const DistractedPair& pair, const AugmentConfig& augment) {
  if (pair.lambda1 && pair.lambda2) return pair.lambda1->value() * pair.lambda2->value();
  if (pair.lambda1) return pair.lambda1->value();
  if (pair.lambda2) return pair.lambda2->value();
  if (augment.forced_lambda) return *augment.forced_lambda;
  return pair.variant == AugmentVariant::kGaussianNoise ? 0.5 : 0.0;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Sample>
torch::Tensor stack_frames(const std::vector<Sample>& set, const std::vector<std::size_t>& idx, int which) {
  std::vector<const Image*> frames;
  for (auto i : idx) frames.push_back(which == 1 ? &set[i].frame1 : &set[i].frame2);
  return images_to_tensor(frames);
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

void restore(const std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& saved) {
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(saved[i]);
}

struct Distracted {
  torch::Tensor frame1;
  torch::Tensor frame2;
  std::vector<double> ratios;
};

template <typename Sample>
Distracted distract_batch(const std::vector<Sample>& set, const std::vector<std::size_t>& idx,
                          const AugmentConfig& augment, const FramePool& pool, Rng& rng) {
  std::vector<Image> f1, f2;
  Distracted out;
  for (auto i : idx) {
    const auto& s = set[i];
    auto pair = make_distracted_pair(s.frame1, s.frame2, augment, pool, s.id, rng);
    out.ratios.push_back(pair_weight(pair, augment));
    f1.push_back(std::move(pair.frame1));
    f2.push_back(std::move(pair.frame2));
  }
  std::vector<const Image*> p1, p2;
  for (std::size_t k = 0; k < f1.size(); ++k) {
    p1.push_back(&f1[k]);
    p2.push_back(&f2[k]);
  }
  out.frame1 = images_to_tensor(p1);
  out.frame2 = images_to_tensor(p2);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

TrainReport train(FlowModel& model, const TrainConfig& cfg, const TrainData& data) {
  cfg.validate();
  if (data.labeled == nullptr || data.labeled->empty()) throw EmptySourceError("labeled source is empty");
  const bool semi = cfg.mode == TrainMode::kSemiSupervised;
  const bool distract = cfg.mode != TrainMode::kSupervisedBase;
  if (semi && (data.unlabeled == nullptr || data.unlabeled->empty())) {
    throw ConfigError("semi_supervised mode requires an unlabeled source");
  }
  auto params = model.parameters();
  if (params.empty()) throw ContractViolation("model has no trainable parameters");

  const auto& labeled = *data.labeled;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const auto t_start = std::chrono::steady_clock::now();

  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.lr.max_lr)
                                      .weight_decay(cfg.lr.weight_decay)
                                      .eps(cfg.lr.epsilon));

  FramePool labeled_pool, unlabeled_pool;
  if (distract) labeled_pool = make_frame_pool(labeled);
  if (semi) unlabeled_pool = make_frame_pool(*data.unlabeled);
  Rng labeled_rng(derive_seed(cfg.seed, 4));
  Rng unlabeled_rng(derive_seed(cfg.seed, 5));

  std::optional<PairedBatchStream> paired;
  std::optional<BatchStream> single;
  if (semi) {
    paired.emplace(labeled.size(), data.unlabeled->size(), batch, cfg.seed);
  } else {
    single.emplace(labeled.size(), batch, cfg.seed);
  }

  TrainReport report;
  report.mode = cfg.mode;
  std::vector<double> history;
  auto previous = snapshot(params);
  auto current = previous;

  auto flag = [&](int step, std::string reason) {
    report.diverged = true;
    report.diverged_at = step;
    report.divergence_reason = std::move(reason);
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const double lr = cfg.lr.at(step, cfg.steps);
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    model.set_training(true);

    std::vector<std::size_t> lidx, uidx;
    if (semi) {
      auto b = paired->next();
      lidx = std::move(b.labeled);
      uidx = std::move(b.unlabeled);
    } else {
      lidx = single->next();
    }

    StepRecord rec;
    rec.step = step;
    rec.lr = lr;

    auto f1 = stack_frames(labeled, lidx, 1);
    auto f2 = stack_frames(labeled, lidx, 2);
    std::vector<const FlowField*> gts;
    std::vector<const ValidMask*> valids;
    for (auto i : lidx) {
      gts.push_back(&labeled[i].gt_flow);
      valids.push_back(&labeled[i].valid);
    }
    auto gt = flows_to_tensor(gts);
    auto valid = masks_to_tensor(valids);

    auto base_preds = model.forward(f1, f2, cfg.iterations);
    auto base = sequence_l1_per_sample(base_preds, gt, valid, cfg.loss.seq_decay);
    torch::Tensor sup;
    rec.loss_base = base.mean().item<double>();
    if (distract) {
      auto d = distract_batch(labeled, lidx, cfg.augment, labeled_pool, labeled_rng);
      auto w = distraction_weights(d.ratios, cfg.loss);
      auto dist_preds = model.forward(d.frame1, d.frame2, cfg.iterations);
      auto dist = loss_dist_per_sample(dist_preds, gt, valid, cfg.loss.seq_decay);
      sup = (base + w.to(base.dtype()) * dist).mean();
      rec.loss_dist = dist.mean().item<double>();
      rec.w_dist.assign(w.data_ptr<double>(), w.data_ptr<double>() + w.numel());
    } else {
      sup = base.mean();
    }

    torch::Tensor self = torch::zeros({}, sup.options());
    if (semi) {
      const auto& unlabeled = *data.unlabeled;
      auto u1 = stack_frames(unlabeled, uidx, 1);
      auto u2 = stack_frames(unlabeled, uidx, 2);
      BidirectionalPrediction bi;
      {
        torch::NoGradGuard no_grad;
        bi = predict_bidirectional(model, u1, u2, cfg.iterations);
      }
      const auto opts = cfg.loss.confidence();
      std::vector<ValidMask> masks;
      std::size_t selected = 0, total = 0;
      std::vector<std::size_t> probe_selected(cfg.coverage_probe_taus.size(), 0);
      for (std::size_t b = 0; b < uidx.size(); ++b) {
        auto fwd = tensor_to_flow(bi.forward.final(), static_cast<std::int64_t>(b), FlowDirection::kForward);
        auto bwd = tensor_to_flow(bi.backward.final(), static_cast<std::int64_t>(b), FlowDirection::kBackward);
        auto conf = confidence_map(fwd, bwd, opts);
        masks.push_back(consistency_mask(conf, cfg.loss.tau));
        selected += masks.back().count();
        total += masks.back().pixel_count();
        for (std::size_t k = 0; k < probe_selected.size(); ++k) {
          probe_selected[k] += consistency_mask(conf, cfg.coverage_probe_taus[k]).count();
        }
      }
      rec.coverage = static_cast<double>(selected) / static_cast<double>(total);
      for (auto s : probe_selected) rec.probe_coverage.push_back(static_cast<double>(s) / static_cast<double>(total));

      std::vector<const ValidMask*> mask_ptrs;
      for (const auto& m : masks) mask_ptrs.push_back(&m);
      auto gate = masks_to_tensor(mask_ptrs);
      auto pseudo = bi.forward.final();

      auto d = distract_batch(unlabeled, uidx, cfg.augment, unlabeled_pool, unlabeled_rng);
      auto self_preds = model.forward(d.frame1, d.frame2, cfg.iterations);
      self = loss_self(self_preds, pseudo, gate, cfg.loss.seq_decay);
      rec.loss_self = self.item<double>();
    }

    torch::Tensor loss;
    try {
      loss = loss_total(sup, self, semi ? cfg.loss.w_self : 0.0);
    } catch (const TrainingInstability& e) {
      restore(params, previous);
      flag(step, e.what());
      report.steps.push_back(std::move(rec));
      break;
    }
    rec.loss_total = loss.item<double>();

    if (static_cast<int>(history.size()) >= cfg.divergence.min_history) {
      const auto from = history.size() - std::min<std::size_t>(history.size(), cfg.divergence.window);
      const double med = median(std::vector<double>(history.begin() + static_cast<std::ptrdiff_t>(from), history.end()));
      if (rec.loss_total > cfg.divergence.factor * med) {
        restore(params, previous);
        flag(step, "loss " + format_double(rec.loss_total) + " exceeds " + format_double(cfg.divergence.factor) +
                       "x the trailing median " + format_double(med));
        report.steps.push_back(std::move(rec));
        break;
      }
    }
    history.push_back(rec.loss_total);

    opt.zero_grad();
    loss.backward();
    rec.grad_norm = torch::nn::utils::clip_grad_norm_(params, cfg.lr.clip_norm);
    if (!std::isfinite(rec.grad_norm)) {
      opt.zero_grad();
      flag(step, "non-finite gradient norm");
      report.steps.push_back(std::move(rec));
      break;
    }
    opt.step();
    previous = std::move(current);
    current = snapshot(params);
    report.steps.push_back(std::move(rec));

    const int done = step + 1;
    if (cfg.eval_every > 0 && data.validation != nullptr && !data.validation->empty() &&
        (done % cfg.eval_every == 0 || done == cfg.steps)) {
      auto m = evaluate(model, *data.validation, cfg.iterations);
      report.evals.push_back({done, m.epe, m.fl_all});
    }
    if (cfg.checkpoint_every > 0 && !data.out_dir.empty() && done % cfg.checkpoint_every == 0) {
      save_checkpoint(model, data.out_dir / ("checkpoint_" + std::to_string(done) + ".fmx"));
    }
  }

  model.set_training(false);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (!data.out_dir.empty()) report.write_jsonl(data.out_dir / "report.jsonl");
  return report;
}

TrainOutcome train_supervised(const TrainConfig& cfg, const TrainData& data, const ToyModelConfig& arch,
                              const ToyFlowModel* init) {
  if (cfg.mode == TrainMode::kSemiSupervised) {
    throw ContractViolation("train_supervised needs mode supervised_base or supervised_distract");
  }
  TrainOutcome out;
  out.model = std::make_unique<ToyFlowModel>(init ? init->config() : arch, derive_seed(cfg.seed, 3));
  if (init) out.model->copy_parameters_from(*init);
  out.report = train(*out.model, cfg, data);
  return out;
}

TrainOutcome train_semi(const TrainConfig& cfg, const TrainData& data, const ToyFlowModel* init,
                        const ToyModelConfig& arch) {
  if (cfg.mode != TrainMode::kSemiSupervised) {
    throw ContractViolation("train_semi needs mode semi_supervised");
  }
  TrainOutcome out;
  out.model = std::make_unique<ToyFlowModel>(init ? init->config() : arch, derive_seed(cfg.seed, 3));
  if (init) out.model->copy_parameters_from(*init);
  out.report = train(*out.model, cfg, data);
  return out;
}

void TrainReport::write_jsonl(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  for (const auto& s : steps) {
    json j{{"type", "step"},      {"step", s.step},           {"lr", s.lr},
           {"loss_base", s.loss_base}, {"loss_dist", s.loss_dist}, {"loss_self", s.loss_self},
           {"loss_total", s.loss_total}, {"grad_norm", s.grad_norm}, {"w_dist", s.w_dist}};
    if (s.coverage) j["coverage"] = *s.coverage;
    if (!s.probe_coverage.empty()) j["probe_coverage"] = s.probe_coverage;
    out << j.dump() << '\n';
  }
  for (const auto& e : evals) {
    out << json{{"type", "eval"}, {"step", e.step}, {"epe", e.epe}, {"fl_all", e.fl_all}}.dump() << '\n';
  }
  json summary{{"type", "summary"},
               {"mode", std::string(to_string(mode))},
               {"steps_run", steps.size()},
               {"diverged", diverged},
               {"wall_seconds", wall_seconds}};
  if (diverged_at) {
    summary["diverged_at"] = *diverged_at;
    summary["divergence_reason"] = divergence_reason;
  }
  out << summary.dump() << '\n';
}

// ---------------------------------------------------------------------------

Metrics evaluate(FlowModel& model, const std::vector<LabeledSample>& dataset, int iterations, OutlierRule rule,
                 int batch_size) {
  if (dataset.empty()) throw EmptySourceError("evaluation dataset is empty");
  if (batch_size < 1) throw ContractViolation("batch_size must be positive");
  torch::NoGradGuard no_grad;
  model.set_training(false);

  Metrics m;
  ErrorTally pooled;
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(dataset.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = start + k;
    auto seq = model.forward(stack_frames(dataset, idx, 1), stack_frames(dataset, idx, 2), iterations);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& s = dataset[idx[k]];
      auto pred = tensor_to_flow(seq.final(), static_cast<std::int64_t>(k));
      auto t = tally_errors(pred, s.gt_flow, s.valid, std::nullopt, rule);
      if (t.pixels == 0) continue;
      m.per_sample_epe.push_back(t.mean_epe());
      m.per_sample_fl_all.push_back(t.outlier_percent());
      pooled += t;
    }
  }
  if (pooled.pixels == 0) throw NoValidPixels("evaluation dataset has no valid pixels");
  double sum = 0.0;
  for (double e : m.per_sample_epe) sum += e;
  m.samples = m.per_sample_epe.size();
  m.pixels = pooled.pixels;
  m.epe = sum / static_cast<double>(m.samples);
  m.fl_all = pooled.outlier_percent();
  return m;
}

std::vector<CalibrationPoint> calibrate(FlowModel& model, const std::vector<LabeledSample>& dataset,
                                        const std::vector<double>& thresholds, int iterations,
                                        const ConfidenceOptions& options, int batch_size) {
  if (dataset.empty()) throw EmptySourceError("calibration dataset is empty");
  if (batch_size < 1) throw ContractViolation("batch_size must be positive");
  CalibrationAccumulator acc(thresholds);
  torch::NoGradGuard no_grad;
  model.set_training(false);
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(dataset.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = start + k;
    auto bi = predict_bidirectional(model, stack_frames(dataset, idx, 1), stack_frames(dataset, idx, 2), iterations);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& s = dataset[idx[k]];
      const auto b = static_cast<std::int64_t>(k);
      acc.add(tensor_to_flow(bi.forward.final(), b, FlowDirection::kForward),
              tensor_to_flow(bi.backward.final(), b, FlowDirection::kBackward), s.gt_flow, s.valid, options);
    }
  }
  return acc.result();
}

// ---------------------------------------------------------------------------

const AblationSummary& AblationTable::summary(std::string_view cell) const {
  for (const auto& s : summaries) {
    if (s.cell == cell) return s;
  }
  throw ContractViolation("no ablation cell named '" + std::string(cell) + "'");
}

void AblationTable::write_tsv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write ablation table " + path.string());
  auto num = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("nan"); };
  out << "cell\tseed\tepe\tfl_all\tdiverged\terror\n";
  for (const auto& r : rows) {
    out << r.cell << '\t' << r.seed << '\t' << num(r.metrics ? std::optional(r.metrics->epe) : std::nullopt) << '\t'
        << num(r.metrics ? std::optional(r.metrics->fl_all) : std::nullopt) << '\t' << (r.diverged ? 1 : 0) << '\t'
        << r.error << '\n';
  }
  out << "\n# cell\tmedian_epe\tmedian_fl_all\truns\tdiverged\tfailed\n";
  for (const auto& s : summaries) {
    out << s.cell << '\t' << num(s.median_epe) << '\t' << num(s.median_fl_all) << '\t' << s.runs << '\t'
        << s.diverged << '\t' << s.failed << '\n';
  }
}

AblationTable run_ablation(const std::vector<AblationCell>& cells, const std::vector<std::uint64_t>& seeds,
                           const TrainData& data, const std::vector<LabeledSample>& validation,
                           const ToyModelConfig& arch, const std::function<void(const AblationRow&)>& on_row) {
  if (cells.empty()) throw ConfigError("ablation grid has no cells");
  if (seeds.empty()) throw ConfigError("ablation grid has no seeds");
  TrainData cell_data = data;
  cell_data.out_dir.clear();

  AblationTable table;
  for (const auto& cell : cells) {
    AblationSummary summary;
    summary.cell = cell.name;
    std::vector<double> epes, fls;
    for (auto seed : seeds) {
      AblationRow row;
      row.cell = cell.name;
      row.seed = seed;
      try {
        auto cfg = cell.config;
        cfg.seed = seed;
        std::unique_ptr<ToyFlowModel> init = cell.init ? cell.init(seed) : nullptr;
        auto model = std::make_unique<ToyFlowModel>(init ? init->config() : arch, derive_seed(seed, 3));
        if (init) model->copy_parameters_from(*init);
        auto report = train(*model, cfg, cell_data);
        row.diverged = report.diverged;
        row.metrics = evaluate(*model, validation, cfg.iterations);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      ++summary.runs;
      if (!row.error.empty()) {
        ++summary.failed;
      } else if (row.diverged) {
        ++summary.diverged;
      } else {
        epes.push_back(row.metrics->epe);
        fls.push_back(row.metrics->fl_all);
      }
      if (on_row) on_row(row);
      table.rows.push_back(std::move(row));
    }
    if (!epes.empty()) {
      summary.median_epe = median(epes);
      summary.median_fl_all = median(fls);
    }
    table.summaries.push_back(std::move(summary));
  }
  return table;
}

}  // namespace flowmix
