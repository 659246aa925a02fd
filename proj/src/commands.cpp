#include "dan/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>

#include "dan/image_io.hpp"

namespace dan {
namespace fs = std::filesystem;

namespace {

constexpr uint64_t kVideoSeedStride = 0x9E3779B97F4A7C15ull;
constexpr uint64_t kHeldOutSalt = 0xA5A5A5A5DEADBEEFull;

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

fs::path resolve_dataset(const fs::path& explicit_path, const std::string& configured, const std::string& fallback) {
  if (!explicit_path.empty()) return explicit_path;
  if (!configured.empty()) return configured;
  return fallback;
}

std::string checkpoint_name(int64_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%08lld.ckpt", static_cast<long long>(iteration));
  return buf;
}

EvalOptions eval_options(const RunConfig& config, const CheckpointData& checkpoint) {
  EvalOptions o;
  o.psnr.cap = config.eval.psnr_cap;
  o.psnr.quantized = config.eval.quantized;
  o.config = checkpoint.config;
  o.config.emplace_back("eval.psnr_cap", config.get("eval.psnr_cap"));
  o.config.emplace_back("eval.quantized", config.get("eval.quantized"));
  std::string text;
  for (const auto& [k, v] : o.config) text += k + "=" + v + "\n";
  o.config_fingerprint = fingerprint(text);
  return o;
}

Tensor pack_maps(const Tensor& a, const Tensor& b, const Tensor& c) { return torch::cat({a, b, c}, 1); }

}  // namespace

void apply_runtime(const RunConfig& config) {
  if (config.device != "cpu") throw ConfigError("run.device: only 'cpu' is supported, got '" + config.device + "'");
  if (config.deterministic) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }
}

std::vector<TrainingSequence> load_dataset(const fs::path& path) {
  if (!fs::is_directory(path)) throw IngestionError("dataset directory " + path.string() + " does not exist");
  if (fs::is_directory(path / "blur")) return ingest_directory(path, DatasetLayout::kVideo);
  return ingest_directory(path, DatasetLayout::kDataset);
}

SynthResult cmd_synth(const RunConfig& config) {
  config.validate();
  SynthResult result;
  result.root = config.data.root;
  ensure_directory(result.root);
  const MotionSpec motion = MotionSpec::parse(config.data.motion);
  const ToySceneOptions scene{config.data.height, config.data.width};
  for (int v = 0; v < config.data.videos; ++v) {
    char id[32];
    std::snprintf(id, sizeof id, "video_%03d", v);
    const TrainingSequence seq = make_toy_training_sequence(config.seed * kVideoSeedStride + static_cast<uint64_t>(v),
                                                            config.data.frames, motion, config.data.accumulate,
                                                            scene, id);
    write_video_directory(result.root / id, seq);
    result.video_ids.emplace_back(id);
  }
  write_manifest(result.root / "manifest.txt", result.video_ids);
  return result;
}

TrainResult cmd_train(const RunConfig& config, const TrainCommandOptions& options) {
  config.validate();
  const fs::path dataset_path = resolve_dataset({}, config.train.dataset, config.data.root);
  std::vector<TrainingSequence> dataset = load_dataset(dataset_path);
  auto backend = make_flow_backend(config.model.flow_backend);
  const InitMode init = config.train.init == "identity" ? InitMode::kIdentity : InitMode::kDefault;
  DanModel model = make_model(config.model.dan(), config.seed, init);
  Trainer trainer(model, *backend, config.train_config(), std::move(dataset));

  const fs::path out_dir = config.train.out_dir;
  ensure_directory(out_dir);
  const auto snapshot = config.snapshot();
  if (options.resume) {
    const CheckpointData data = load_checkpoint(*options.resume);
    trainer.restore(data);
  }
  {
    std::ofstream ini(out_dir / "config.ini", std::ios::trunc);
    ini << config.to_ini();
    if (!ini) throw IoError("cannot write " + (out_dir / "config.ini").string());
  }

  std::optional<TrainingSequence> held_out;
  if (config.train.val_every > 0) {
    held_out = make_toy_training_sequence(config.seed ^ kHeldOutSalt, config.data.frames,
                                          MotionSpec::parse(config.data.motion), config.data.accumulate,
                                          {config.data.height, config.data.width}, "held_out");
  }

  TrainResult result;
  result.metrics = out_dir / "metrics.csv";
  MetricsLog metrics(result.metrics, options.resume.has_value());
  const int64_t max_iters = config.train.params.max_iters;
  while (trainer.iteration() < max_iters) {
    IterationLog entry;
    entry.iteration = trainer.iteration();
    entry.lr = trainer.current_lr();
    entry.loss = trainer.train_iteration();
    const int64_t done = trainer.iteration();
    if (held_out && (done % config.train.val_every == 0 || done == max_iters)) {
      entry.val_psnr = trainer.validation_psnr(*held_out);
    }
    metrics.write(entry);
    result.last_loss = entry.loss;
    if (options.progress && (done % std::max<int64_t>(1, options.progress_every) == 0 || done == max_iters)) {
      *options.progress << "iteration " << entry.iteration << " l_total " << std::setprecision(6) << entry.loss.l_total
                        << " lr " << entry.lr << '\n';
    }
    if (config.train.checkpoint_every > 0 && done % config.train.checkpoint_every == 0 && done < max_iters) {
      save_checkpoint(out_dir / checkpoint_name(done), trainer.checkpoint(snapshot));
    }
  }
  result.iterations = trainer.iteration();
  result.final_checkpoint = out_dir / "final.ckpt";
  save_checkpoint(result.final_checkpoint, trainer.checkpoint(snapshot));
  return result;
}

DanModel load_model(const CheckpointData& checkpoint) {
  RunConfig config;
  try {
    config = RunConfig::from_snapshot(checkpoint.config);
  } catch (const ConfigError& e) {
    throw IncompatibleCheckpointError(std::string("checkpoint config: ") + e.what());
  }
  DanModel model = make_model(config.model.dan(), config.seed, InitMode::kDefault);
  restore_model(model, checkpoint);
  model->eval();
  return model;
}

namespace {

std::unique_ptr<FlowBackend> checkpoint_backend(const CheckpointData& checkpoint) {
  return make_flow_backend(checkpoint.config_value("model.flow_backend").value_or("builtin-pyramid"));
}

}  // namespace

DeblurResult cmd_deblur(const fs::path& checkpoint, const fs::path& input, const fs::path& output,
                        bool dump_intermediates) {
  const CheckpointData data = load_checkpoint(checkpoint);
  DanModel model = load_model(data);
  auto backend = checkpoint_backend(data);

  if (!fs::is_directory(input)) throw IngestionError("input directory " + input.string() + " does not exist");
  const fs::path frame_dir = fs::is_directory(input / "blur") ? input / "blur" : input;
  const std::vector<fs::path> files = list_frame_files(frame_dir);
  if (files.size() < 3) {
    throw IngestionError("input " + frame_dir.string() + " holds " + std::to_string(files.size()) +
                         " NNNNN.png frames; at least 3 are needed");
  }
  std::vector<Tensor> frames;
  for (const auto& f : files) {
    frames.push_back(read_png(f));
    if (frames.back().sizes() != frames.front().sizes()) {
      throw IngestionError("frame " + f.string() + " is " + shape_string(frames.back()) + ", expected " +
                           shape_string(frames.front()));
    }
  }

  ensure_directory(output);
  const fs::path inter = output / "intermediates";
  if (dump_intermediates) {
    for (const char* sub : {"P", "D", "RM", "Occ"}) ensure_directory(inter / sub);
  }

  DeblurResult result;
  RunOptions run;
  run.keep_records = dump_intermediates;
  run.on_frame = [&](int64_t index, const Tensor& frame) {
    const fs::path out = output / files[index].filename();
    write_png(out, frame);
    result.outputs.push_back(out);
  };
  torch::NoGradGuard no_grad;
  const PipelineOutput out = run_video(frames, model, *backend, run);
  result.frames = static_cast<int64_t>(out.aggregated.size());

  if (dump_intermediates) {
    for (const auto& rec : out.records) {
      if (rec.deblurred.defined()) {
        const fs::path name = files[rec.center_index].filename();
        write_png(inter / "P" / name, rec.preprocessed[1]);
        write_png(inter / "D" / name, rec.deblurred);
        if (rec.abdn_input) {
          const auto& a = rec.abdn_input->alignment;
          write_png(inter / "Occ" / name, pack_maps(a.occ_prev.mask, a.occ_next.mask, torch::zeros_like(a.occ_prev.mask)));
        }
      }
      if (rec.reliability && rec.aggregated_index >= 0) {
        const auto& m = *rec.reliability;
        write_png(inter / "RM" / files[rec.aggregated_index].filename(), pack_maps(m.prev, m.center, m.next));
      }
    }
  }
  return result;
}

EvalResult cmd_eval(const RunConfig& config, const fs::path& checkpoint, const fs::path& dataset,
                    const fs::path& out_dir) {
  config.validate();
  const CheckpointData data = load_checkpoint(checkpoint);
  DanModel model = load_model(data);
  auto backend = checkpoint_backend(data);
  const auto clips = load_dataset(resolve_dataset(dataset, config.eval.dataset, config.data.root));
  const EvalOptions options = eval_options(config, data);

  EvalResult result;
  result.report = ablate(model, data, clips, *backend, AblationMode::kFull, options);
  result.baseline = evaluate_inputs(clips, options);
  const fs::path dir = out_dir.empty() ? fs::path(config.eval.out_dir) : out_dir;
  result.report_path = dir / "eval_full.csv";
  result.baseline_path = dir / "eval_input.csv";
  write_report_csv(result.report_path, result.report);
  write_report_csv(result.baseline_path, result.baseline);
  return result;
}

AblationResult cmd_ablate(const RunConfig& config, const fs::path& checkpoint, const fs::path& dataset,
                          const std::vector<std::string>& modes, const fs::path& out_dir) {
  config.validate();
  std::vector<AblationMode> parsed;
  for (const auto& m : modes.empty() ? config.ablation_modes() : modes) parsed.push_back(parse_ablation_mode(m));
  if (parsed.empty()) throw ArgumentError("ablate: no modes given");

  const CheckpointData data = load_checkpoint(checkpoint);
  for (AblationMode m : parsed) check_mode_compatible(m, data);
  DanModel model = load_model(data);
  auto backend = checkpoint_backend(data);
  const auto clips = load_dataset(resolve_dataset(dataset, config.eval.dataset, config.data.root));
  const EvalOptions options = eval_options(config, data);
  const fs::path dir = out_dir.empty() ? fs::path(config.eval.out_dir) : out_dir;

  AblationResult result;
  std::map<AblationMode, double> means;
  for (AblationMode m : parsed) {
    EvalReport report = ablate(model, data, clips, *backend, m, options);
    means[m] = report.overall();
    result.reports.push_back(std::move(report));
  }
  const EvalReport baseline = evaluate_inputs(clips, options);
  if (means.count(AblationMode::kPpnOnly) && means.count(AblationMode::kPpnAbdn) && means.count(AblationMode::kFull)) {
    result.trend = check_trend(means[AblationMode::kFull], means[AblationMode::kPpnAbdn], means[AblationMode::kPpnOnly]);
    for (auto& report : result.reports) report.notes.push_back("trend " + result.trend->describe());
  }
  for (const auto& report : result.reports) {
    const fs::path path = dir / ("ablation_" + report.mode + ".csv");
    write_report_csv(path, report);
    result.paths.push_back(path);
  }

  result.summary_path = dir / "ablation_summary.csv";
  std::ofstream summary(result.summary_path, std::ios::trunc);
  if (!summary) throw IoError("cannot write " + result.summary_path.string());
  summary << "mode,mean_psnr,gain_over_input,requires_retraining\n" << std::setprecision(10);
  for (const auto& report : result.reports) {
    const AblationMode m = parse_ablation_mode(report.mode);
    summary << report.mode << ',' << report.overall() << ',' << report.overall() - baseline.overall() << ','
            << (requires_retraining(m) ? "yes" : "no") << '\n';
  }
  summary << "# input_mean_psnr=" << baseline.overall() << '\n';
  summary << "# config_fingerprint=" << options.config_fingerprint << '\n';
  if (result.trend) summary << "# trend " << (result.trend->holds() ? "holds" : "FAILED") << ": " << result.trend->describe() << '\n';
  if (!summary) throw IoError("failed writing " + result.summary_path.string());
  return result;
}

}  // namespace dan
