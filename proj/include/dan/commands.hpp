#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dan/config.hpp"
#include "dan/evaluation.hpp"
#include "dan/video_data.hpp"

namespace dan {

/// Thread count and deterministic-algorithm switches for a run.
void apply_runtime(const RunConfig& config);

/// Reads a dataset directory (manifest.txt or video subdirectories) or a
/// single video directory holding blur/ and sharp/.
std::vector<TrainingSequence> load_dataset(const std::filesystem::path& path);

struct SynthResult {
  std::filesystem::path root;
  std::vector<std::string> video_ids;
};

/// Writes data.videos toy videos of data.frames blur/sharp pairs under
/// data.root plus manifest.txt.
SynthResult cmd_synth(const RunConfig& config);

struct TrainCommandOptions {
  std::optional<std::filesystem::path> resume;
  std::ostream* progress = nullptr;  // one line per logged iteration
  int64_t progress_every = 50;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics;
  int64_t iterations = 0;
  LossBreakdown last_loss;
};

/// Trains on train.dataset (or data.root); writes metrics.csv, periodic
/// checkpoints and final.ckpt into train.out_dir.
TrainResult cmd_train(const RunConfig& config, const TrainCommandOptions& options = {});

/// Model with the architecture and weights stored in `checkpoint`.
DanModel load_model(const CheckpointData& checkpoint);

struct DeblurResult {
  int64_t frames = 0;
  std::vector<std::filesystem::path> outputs;
};

/// Restores the frames of `input` (a directory of NNNNN.png frames, or a
/// video directory with blur/) into `output` with the same file names.
/// With `dump_intermediates`, also writes P, D, RM and Occ images under
/// output/intermediates.
DeblurResult cmd_deblur(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                        const std::filesystem::path& output, bool dump_intermediates = false);

struct EvalResult {
  EvalReport report;
  EvalReport baseline;
  std::filesystem::path report_path;
  std::filesystem::path baseline_path;
};

/// Full pipeline report plus the blurry-input baseline.
EvalResult cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& dataset, const std::filesystem::path& out_dir);

struct AblationResult {
  std::vector<EvalReport> reports;
  std::vector<std::filesystem::path> paths;
  std::optional<TrendCheck> trend;  // when ppn-only, ppn+abdn and full all ran
  std::filesystem::path summary_path;
};

AblationResult cmd_ablate(const RunConfig& config, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& dataset, const std::vector<std::string>& modes,
                          const std::filesystem::path& out_dir);

}  // namespace dan
