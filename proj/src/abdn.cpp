#include "dan/abdn.hpp"

namespace dan {
namespace {

namespace F = torch::nn::functional;

torch::nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

// Two 3x3 convolutions with ReLU; the first may downsample.
struct ConvPairImpl : torch::nn::Module {
  ConvPairImpl(int64_t in, int64_t out, int64_t stride) {
    a = register_module("a", conv3(in, out, stride));
    b = register_module("b", conv3(out, out));
  }
  Tensor forward(const Tensor& x) { return torch::relu(b(torch::relu(a(x)))); }
  torch::nn::Conv2d a{nullptr}, b{nullptr};
};
TORCH_MODULE(ConvPair);

// Nearest upsampling, conv to the skip width, concatenation, merge conv.
struct UpBlockImpl : torch::nn::Module {
  UpBlockImpl(int64_t in, int64_t out) {
    up = register_module("up", conv3(in, out));
    merge = register_module("merge", conv3(2 * out, out));
  }
  Tensor forward(const Tensor& x, const Tensor& skip) {
    Tensor u = F::interpolate(x, F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                                     .mode(torch::kNearest));
    u = torch::relu(up(u));
    return torch::relu(merge(torch::cat({u, skip}, 1)));
  }
  torch::nn::Conv2d up{nullptr}, merge{nullptr};
};
TORCH_MODULE(UpBlock);

}  // namespace

AbdnPreset parse_abdn_preset(std::string_view name) {
  if (name == "light") return AbdnPreset::kLight;
  if (name == "full") return AbdnPreset::kFull;
  throw ArgumentError("unknown ABDN preset '" + std::string(name) + "' (expected light|full)");
}

std::string_view to_string(AbdnPreset preset) { return preset == AbdnPreset::kLight ? "light" : "full"; }

AbdnConfig AbdnConfig::from_preset(AbdnPreset preset) {
  switch (preset) {
    case AbdnPreset::kLight: return {24, 3};
    case AbdnPreset::kFull: return {48, 4};
  }
  return {};
}

AbdnImpl::AbdnImpl(AbdnConfig config) : config_(config) {
  if (config_.width < 1 || config_.depth < 1) throw ArgumentError("abdn: width and depth must be positive");
  encoder = register_module("encoder", torch::nn::ModuleList());
  decoder = register_module("decoder", torch::nn::ModuleList());
  int64_t width = config_.width;
  encoder->push_back(ConvPair(9, width, 1));
  for (int level = 1; level <= config_.depth; ++level) {
    encoder->push_back(ConvPair(width, 2 * width, 2));
    width *= 2;
  }
  for (int level = config_.depth; level >= 1; --level) {
    decoder->push_back(UpBlock(width, width / 2));
    width /= 2;
  }
  out = register_module("out", conv3(config_.width, 3));
}

Tensor AbdnImpl::forward(const AlignedStack& stack) {
  require_image(stack.center, 3, "abdn_forward(center)");
  require_image(stack.revised_forward, 3, "abdn_forward(revised_forward)");
  require_image(stack.revised_backward, 3, "abdn_forward(revised_backward)");
  require_same_grid(stack.center, stack.revised_forward, "abdn_forward");
  require_same_grid(stack.center, stack.revised_backward, "abdn_forward");
  const int64_t multiple = int64_t{1} << config_.depth;
  if (stack.center.size(2) % multiple != 0 || stack.center.size(3) % multiple != 0) {
    throw DimensionError("abdn_forward: frame size " + shape_string(stack.center) + " not divisible by " +
                         std::to_string(multiple));
  }
  Tensor x = torch::cat({stack.revised_forward, stack.center, stack.revised_backward}, 1);
  std::vector<Tensor> skips;
  for (const auto& level : *encoder) {
    x = level->as<ConvPair>()->forward(x);
    skips.push_back(x);
  }
  skips.pop_back();
  for (const auto& level : *decoder) {
    x = level->as<UpBlock>()->forward(x, skips.back());
    skips.pop_back();
  }
  return (stack.center + out(x)).clamp(0.0, 1.0);
}

AbdnInput build_abdn_input(const Tensor& p_prev, const Tensor& p_center, const Tensor& p_next,
                           FlowBackend& backend, const OcclusionParams& params, bool use_occlusion) {
  AbdnInput input;
  input.alignment = align_triplet(p_prev, p_center, p_next, backend, params, use_occlusion);
  input.stack = {input.alignment.revised_forward, p_center, input.alignment.revised_backward};
  return input;
}

}  // namespace dan
