#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dan/common.hpp"
#include "dan/pipeline.hpp"
#include "dan/video_data.hpp"

namespace dan {

// ---------------------------------------------------------------- losses

struct LossBreakdown {
  double l_ppn = 0.0;
  double l_abdn = 0.0;
  double l_fan = 0.0;
  double l_total = 0.0;
};

/// Stage outputs of one unrolled sequence, each tagged with the index of the
/// sharp frame it should reproduce.
struct SequenceOutputs {
  std::vector<std::pair<int64_t, Tensor>> preprocessed;  // every PPN slot
  std::vector<std::pair<int64_t, Tensor>> deblurred;
  std::vector<std::pair<int64_t, Tensor>> aggregated;

  void append(const StepRecord& record, int64_t sequence_length);
  void clear();
};

/// Number of terms each stage mean divides by.
struct LossCounts {
  int64_t ppn = 0;
  int64_t abdn = 0;
  int64_t fan = 0;

  static LossCounts of(const SequenceOutputs& outputs);
  /// Counts for a full unroll of `length` frames (three PPN slots per step).
  static LossCounts for_sequence(int64_t length);
};

struct LossTerms {
  Tensor ppn;
  Tensor abdn;
  Tensor fan;

  Tensor total() const { return ppn + abdn + fan; }
  LossBreakdown values() const;
};

/// Sums MSE(output, target) per stage and divides by `counts`.
LossTerms loss_terms(const SequenceOutputs& outputs, const std::vector<Tensor>& targets, const LossCounts& counts);

/// Per-stage sequence means of the frame MSEs; l_total is their sum.
LossBreakdown compute_losses(const SequenceOutputs& outputs, const std::vector<Tensor>& targets);

// ------------------------------------------------------------- optimiser

struct TrainConfig {
  double lr = 1e-4;
  double lr_decay = 0.1;
  int64_t lr_decay_every = 400000;  // 0: scale the boundary with max_iters
  int batch = 5;
  int64_t patch = 256;
  int seq_len = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int64_t max_iters = 1000;
  uint64_t seed = 0;
  int bptt_window = 2;  // steps per truncated-BPTT chunk; 0 = whole sequence
  double noise_variance = 0.01;
  bool flips = true;
  bool color_jitter = true;

  void validate() const;
};

/// Iteration at which the first decay applies. With lr_decay_every == 0 the
/// reference 400k-of-1M boundary is scaled to max_iters.
int64_t decay_boundary(const TrainConfig& config);
double scheduled_lr(const TrainConfig& config, int64_t iteration);

/// Adam over named parameters; moments are kept per parameter name so the
/// state can be checkpointed alongside the weights.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8);

  void zero_grad();
  void step(double lr);

  int64_t steps() const { return steps_; }
  void set_steps(int64_t steps) { steps_ = steps; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  /// Moments as ("adam.m.<name>", ...), ("adam.v.<name>", ...).
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::map<std::string, Tensor>& tensors);

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double beta1_;
  double beta2_;
  double epsilon_;
  int64_t steps_ = 0;
};

// ------------------------------------------------------------ checkpoint

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  int64_t iteration = 0;
  int64_t optimizer_steps = 0;
  std::vector<std::pair<std::string, std::string>> config;  // "section.key" -> value
  std::vector<std::pair<std::string, Tensor>> tensors;      // model params, then optimiser moments

  bool has_prefix(const std::string& prefix) const;
  std::map<std::string, Tensor> tensor_map() const;
  std::optional<std::string> config_value(const std::string& key) const;
};

/// Binary container: magic, format version, text manifest (iteration,
/// optimiser steps, config snapshot) and named little-endian float32 tensors.
void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

CheckpointData capture_checkpoint(DanModel& model, const Adam* optimizer, int64_t iteration,
                                  std::vector<std::pair<std::string, std::string>> config);
/// Copies `ppn.*`, `abdn.*`, `fan.*` tensors into the model; every model
/// parameter must be present with a matching shape.
void restore_model(DanModel& model, const CheckpointData& data);

// --------------------------------------------------------------- trainer

struct IterationLog {
  int64_t iteration = 0;
  LossBreakdown loss;
  double lr = 0.0;
  std::optional<double> val_psnr;
};

/// CSV: iteration,l_ppn,l_abdn,l_fan,l_total,lr,val_psnr
class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& path, bool append);
  void write(const IterationLog& entry);

 private:
  std::ofstream out_;
};

class Trainer {
 public:
  Trainer(DanModel model, FlowBackend& backend, TrainConfig config, std::vector<TrainingSequence> dataset,
          StageOptions stages = {});

  /// One optimiser update at the current iteration; returns its losses.
  LossBreakdown train_iteration();

  /// Loss of one batch without updating anything.
  LossBreakdown evaluate_batch(int64_t iteration);

  int64_t iteration() const { return iteration_; }
  double current_lr() const { return scheduled_lr(config_, iteration_); }
  const TrainConfig& config() const { return config_; }
  DanModel& model() { return model_; }
  Adam& optimizer() { return optimizer_; }

  CheckpointData checkpoint(std::vector<std::pair<std::string, std::string>> config_snapshot) const;
  void restore(const CheckpointData& data);

  /// Mean PSNR of aggregated frames against the sharp frames of `clip`.
  double validation_psnr(const TrainingSequence& clip);

  /// Batch of `batch` augmented windows as per-time-step stacks.
  std::pair<std::vector<Tensor>, std::vector<Tensor>> sample_batch(int64_t iteration) const;

 private:
  LossBreakdown unroll(const std::vector<Tensor>& blurry, const std::vector<Tensor>& sharp, bool backward);

  DanModel model_;
  FlowBackend& backend_;
  TrainConfig config_;
  std::vector<TrainingSequence> dataset_;
  StageOptions stages_;
  Adam optimizer_;
  int64_t iteration_ = 0;
};

}  // namespace dan
