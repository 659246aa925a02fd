#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dan/common.hpp"
#include "dan/pipeline.hpp"
#include "dan/training.hpp"
#include "dan/video_data.hpp"

namespace dan {

struct PsnrOptions {
  double cap = 99.0;       // returned when the frames are identical
  bool quantized = false;  // round both frames to 8 bits first
};

/// 10 log10(1 / MSE) over all elements, for [0, 1] data.
double psnr(const Tensor& prediction, const Tensor& target, const PsnrOptions& options = {});

enum class AblationMode {
  kPpnOnly,
  kPpnAbdn,
  kFull,
  kAbdnOnly,
  kNoNlb,
  kNoOccAbdn,
  kNoOccFan,
};

/// Accepts "ppn-only", "ppn+abdn", "ppn+abdn+fan", "abdn-only", "no-nlb",
/// "no-occ-abdn", "no-occ-fan" and the aliases "ppn" and "full".
AblationMode parse_ablation_mode(std::string_view name);
std::string_view to_string(AblationMode mode);
std::vector<AblationMode> all_ablation_modes();

StageOptions stage_options(AblationMode mode);

enum class ReportedStage { kPreprocessed, kDeblurred, kAggregated };
ReportedStage reported_stage(AblationMode mode);

/// Modes whose stage configuration differs from the one the full model was
/// trained under; their numbers are only meaningful for a model trained in
/// that configuration.
bool requires_retraining(AblationMode mode);

/// Throws IncompatibleCheckpointError when the checkpoint lacks a stage the
/// mode runs.
void check_mode_compatible(AblationMode mode, const CheckpointData& checkpoint);

struct FrameScore {
  std::string video_id;
  int64_t frame_index = 0;
  double psnr = 0.0;
};

struct EvalReport {
  std::string mode = "ppn+abdn+fan";
  std::string config_fingerprint;
  std::vector<FrameScore> frames;
  std::vector<std::string> notes;
  std::vector<std::pair<std::string, std::string>> config;  // snapshot of the run configuration

  /// Per-video mean PSNR in first-appearance order.
  std::vector<std::pair<std::string, double>> per_video() const;
  /// Mean over every frame of every video.
  double overall() const;
};

struct EvalOptions {
  PsnrOptions psnr;
  std::string config_fingerprint;
  std::vector<std::pair<std::string, std::string>> config;
};

EvalReport evaluate(DanModel model, const std::vector<TrainingSequence>& dataset, FlowBackend& backend,
                    AblationMode mode = AblationMode::kFull, const EvalOptions& options = {});

/// Runs `mode` after checking the checkpoint carries the stages it uses.
EvalReport ablate(DanModel model, const CheckpointData& checkpoint, const std::vector<TrainingSequence>& dataset,
                  FlowBackend& backend, AblationMode mode, const EvalOptions& options = {});

/// Module-combination ordering full >= ppn+abdn >= ppn-only, each allowing
/// `tolerance` dB of slack.
struct TrendCheck {
  bool full_over_ppn_abdn = false;
  bool ppn_abdn_over_ppn = false;
  bool holds() const { return full_over_ppn_abdn && ppn_abdn_over_ppn; }
  std::string describe() const;
};
TrendCheck check_trend(double full, double ppn_abdn, double ppn_only, double tolerance = 0.1);

/// PSNR of the blurry inputs themselves.
EvalReport evaluate_inputs(const std::vector<TrainingSequence>& dataset, const EvalOptions& options = {});

/// CSV with header video_id,frame_index,psnr followed by '#' summary lines.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_csv(const std::filesystem::path& path);

/// 64-bit FNV-1a of `text`, as 16 hex digits.
std::string fingerprint(std::string_view text);

}  // namespace dan
