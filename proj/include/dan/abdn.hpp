#pragma once

#include <string_view>

#include "dan/common.hpp"
#include "dan/flow_align.hpp"

namespace dan {

enum class AbdnPreset { kLight, kFull };

AbdnPreset parse_abdn_preset(std::string_view name);
std::string_view to_string(AbdnPreset preset);

struct AbdnConfig {
  int64_t width = 24;  // channels at full resolution, doubled per level
  int depth = 3;       // number of stride-2 levels

  static AbdnConfig from_preset(AbdnPreset preset);
};

/// Centre frame with both neighbours warped onto it and occlusion-revised.
struct AlignedStack {
  Tensor revised_forward;
  Tensor center;
  Tensor revised_backward;
};

struct DeblurredFrame {
  Tensor frame;
  int64_t source_index = 0;
};

/// U-Net over the 9-channel aligned stack with a global residual from the
/// centre frame; output clamped to [0, 1].
class AbdnImpl : public torch::nn::Module {
 public:
  explicit AbdnImpl(AbdnConfig config = {});

  Tensor forward(const AlignedStack& stack);
  const AbdnConfig& config() const { return config_; }

  torch::nn::ModuleList encoder;  // per level: conv pair
  torch::nn::ModuleList decoder;  // per level: upsampling conv + merge conv
  torch::nn::Conv2d out{nullptr};

 private:
  AbdnConfig config_;
};
TORCH_MODULE(Abdn);

struct AbdnInput {
  AlignedStack stack;
  AlignedTriplet alignment;  // flows and occlusion maps, kept for inspection
};

AbdnInput build_abdn_input(const Tensor& p_prev, const Tensor& p_center, const Tensor& p_next,
                           FlowBackend& backend, const OcclusionParams& params = {},
                           bool use_occlusion = true);

}  // namespace dan
