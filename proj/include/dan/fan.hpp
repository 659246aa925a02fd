#pragma once

#include <optional>

#include "dan/common.hpp"
#include "dan/flow_align.hpp"

namespace dan {

struct FanConfig {
  int64_t width = 32;
  int64_t flow_width = 16;    // channels of the flow-feature encoder
  double flow_scale = 0.25;   // flows are scaled by this before encoding
};

/// Per-pixel weights for the warped previous output, the centre deblurred
/// frame and the warped next deblurred frame. Each map is [N, 1, H, W].
struct ReliabilityTriplet {
  Tensor prev;
  Tensor center;
  Tensor next;
};

struct AggregationInput {
  Tensor warped_prev_output;     // previous aggregate warped onto the centre
  Tensor deblurred_center;       // D_t
  Tensor warped_next_deblurred;  // D_{t+1} warped onto the centre
  OcclusionMap occ_prev;
  OcclusionMap occ_next;
  FlowField flow_prev;  // centre -> previous aggregate
  FlowField flow_next;  // centre -> next deblurred
};

/// Reliability network: candidate frames, occlusion maps and encoded flow
/// features go through a shallow conv stack ending in three logit maps,
/// normalised with a per-pixel softmax.
class FanImpl : public torch::nn::Module {
 public:
  explicit FanImpl(FanConfig config = {});

  ReliabilityTriplet reliability(const AggregationInput& input);
  /// Aggregated frame; optionally hands back the reliability maps used.
  Tensor forward(const AggregationInput& input, ReliabilityTriplet* maps = nullptr);

  /// Zeroes the logit weights and sets the logit biases to (0, center_bias, 0).
  void reset_logits(double center_bias);

  const FanConfig& config() const { return config_; }

  torch::nn::Conv2d flow_a{nullptr}, flow_b{nullptr};
  torch::nn::Conv2d body_a{nullptr}, body_b{nullptr}, body_c{nullptr}, logits{nullptr};

 private:
  FanConfig config_;
};
TORCH_MODULE(Fan);

/// out = warped_prev * rm_prev + center * rm_center + warped_next * rm_next,
/// one weight per pixel shared across channels. The triplet must sum to one.
Tensor fan_aggregate(const AggregationInput& input, const ReliabilityTriplet& maps);

/// Aligns the previous aggregate and the next deblurred frame onto the
/// centre deblurred frame. A missing previous aggregate (first frame) or
/// next deblurred frame (last frame) is replaced by the centre frame with
/// zero flow and no occlusion.
AggregationInput build_fan_input(const std::optional<Tensor>& prev_aggregated, const Tensor& center_deblurred,
                                 const std::optional<Tensor>& next_deblurred, FlowBackend& backend,
                                 const OcclusionParams& params = {}, bool use_occlusion = true);

}  // namespace dan
