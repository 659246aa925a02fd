#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "dan/abdn.hpp"
#include "dan/common.hpp"
#include "dan/fan.hpp"
#include "dan/flow_align.hpp"
#include "dan/ppn.hpp"

namespace dan {

struct DanConfig {
  PpnConfig ppn;
  AbdnConfig abdn;
  FanConfig fan;
  OcclusionParams occlusion;
};

class DanModelImpl : public torch::nn::Module {
 public:
  explicit DanModelImpl(DanConfig config = {});

  const DanConfig& config() const { return config_; }

  Ppn ppn{nullptr};
  Abdn abdn{nullptr};
  Fan fan{nullptr};

 private:
  DanConfig config_;
};
TORCH_MODULE(DanModel);

enum class InitMode {
  kDefault,   // residual outputs, non-local projections and FAN logits zeroed
  kIdentity,  // as kDefault, with FAN saturated onto the centre candidate
  kRandom,    // every layer random (small output layers); used by gradient checks
};

/// Logit bias that makes the FAN pick the centre frame to within ~1e-13.
inline constexpr double kIdentityCenterBias = 30.0;

DanModel make_model(const DanConfig& config, uint64_t seed, InitMode mode = InitMode::kDefault);

/// Stage switches used by the ablation harness.
struct StageOptions {
  bool use_nlb = true;
  bool abdn_occlusion = true;
  bool fan_occlusion = true;
  bool bypass_ppn = false;   // P = B
  bool bypass_abdn = false;  // D = P (centre)
  bool bypass_fan = false;   // A = D
};

/// Frames carried between windows. `steps` is the index of the next
/// centre frame.
struct RecurrentState {
  std::optional<Tensor> prev_preprocessed;  // preprocessed frame for the next centre index
  std::optional<Tensor> prev_deblurred;     // D of the previous centre
  std::optional<Tensor> prev_aggregated;    // last emitted aggregate
  int64_t steps = 0;

  void detach();
};

struct StepRecord {
  int64_t center_index = 0;
  std::array<int64_t, 3> slot_indices{};
  std::array<Tensor, 3> preprocessed;
  Tensor deblurred;
  std::optional<Tensor> aggregated;
  int64_t aggregated_index = -1;
  std::optional<AbdnInput> abdn_input;
  std::optional<AggregationInput> fan_input;
  std::optional<ReliabilityTriplet> reliability;
};

struct StepResult {
  std::optional<Tensor> aggregated;
  RecurrentState state;
  StepRecord record;
};

/// Window (B_{k-1}, B_k, B_{k+1}) clamped at the sequence ends.
std::array<Tensor, 3> window_at(const std::vector<Tensor>& frames, int64_t center);

/// Runs one model over a video. Step k deblurs frame k and emits the
/// aggregate of frame k-1, which needs the deblurred frame k; finish()
/// emits the last aggregate.
class DanPipeline {
 public:
  DanPipeline(DanModel model, FlowBackend& backend, StageOptions options = {});

  StepResult step(const std::array<Tensor, 3>& window, const RecurrentState& state);
  StepResult finish(const RecurrentState& state);

  const StageOptions& options() const { return options_; }
  DanModel& model() { return model_; }

 private:
  Tensor aggregate(const RecurrentState& state, const std::optional<Tensor>& next_deblurred, StepRecord& record);

  DanModel model_;
  FlowBackend& backend_;
  StageOptions options_;
};

struct PipelineOutput {
  std::vector<Tensor> aggregated;
  std::vector<Tensor> deblurred;
  std::vector<Tensor> preprocessed_center;
  std::vector<StepRecord> records;  // filled when RunOptions::keep_records
};

struct RunOptions {
  StageOptions stages;
  bool keep_records = false;
  std::function<void(int64_t index, const Tensor& frame)> on_frame;  // streams each aggregate
};

PipelineOutput run_video(const std::vector<Tensor>& blurry, DanModel model, FlowBackend& backend,
                         const RunOptions& options = {});

}  // namespace dan
