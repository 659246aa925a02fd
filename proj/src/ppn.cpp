#include "dan/ppn.hpp"

namespace dan {
namespace {

namespace F = torch::nn::functional;

torch::nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1(int64_t in, int64_t out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)); }

Tensor upsample2(const Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{x.size(2) * 2, x.size(3) * 2})
                               .mode(torch::kNearest));
}

void check_group(const FrameGroup& group, const char* what) {
  require_image(group.blurry, 3, what);
  require_image(group.companion, 3, what);
  require_same_grid(group.blurry, group.companion, what);
}

}  // namespace

NonLocalBlockImpl::NonLocalBlockImpl(int64_t channels, int64_t subsample_above)
    : channels_(channels), inter_(std::max<int64_t>(1, channels / 2)), subsample_above_(subsample_above) {
  theta = register_module("theta", conv1(channels_, inter_));
  phi = register_module("phi", conv1(channels_, inter_));
  g = register_module("g", conv1(channels_, inter_));
  out = register_module("out", conv1(inter_, channels_));
  torch::NoGradGuard no_grad;
  out->weight.zero_();
  out->bias.zero_();
}

Tensor NonLocalBlockImpl::keys(const Tensor& x, torch::nn::Conv2d& proj) {
  Tensor k = proj(x);
  if (subsamples(x)) k = F::max_pool2d(k, F::MaxPool2dFuncOptions(2));
  return k.flatten(2);  // [N, C', HW']
}

Tensor NonLocalBlockImpl::attention(const Tensor& x) {
  const Tensor q = theta(x).flatten(2).transpose(1, 2);  // [N, HW, C']
  const Tensor k = keys(x, phi);                           // [N, C', HW']
  return torch::softmax(torch::bmm(q, k), -1);
}

Tensor NonLocalBlockImpl::forward(const Tensor& x) {
  if (x.size(1) != channels_) {
    throw DimensionError("non-local block: expected " + std::to_string(channels_) + " channels, got " + shape_string(x));
  }
  const Tensor weights = attention(x);                     // [N, HW, HW']
  const Tensor values = keys(x, g).transpose(1, 2);        // [N, HW', C']
  const Tensor y = torch::bmm(weights, values).transpose(1, 2).reshape({x.size(0), inter_, x.size(2), x.size(3)});
  return out(y) + x;
}

PpnImpl::PpnImpl(PpnConfig config) : config_(config) {
  if (config_.width < 1 || config_.nlb_blocks < 0) throw ArgumentError("ppn: invalid configuration");
  const int64_t c = config_.width;
  enc_in = register_module("enc_in", conv3(6, c));
  enc_down1 = register_module("enc_down1", conv3(c, c, 2));
  enc_down2 = register_module("enc_down2", conv3(c, c, 2));
  nonlocal = register_module("nonlocal", torch::nn::ModuleList());
  for (int i = 0; i < config_.nlb_blocks; ++i) nonlocal->push_back(NonLocalBlock(3 * c, config_.subsample_above));
  dec_up1 = register_module("dec_up1", conv3(c, c));
  dec_up2 = register_module("dec_up2", conv3(c, c));
  dec_shallow = register_module("dec_shallow", conv3(6, c));
  dec_merge = register_module("dec_merge", conv3(2 * c, c));
  dec_out = register_module("dec_out", conv3(c, 3));
}

FeatureGrid PpnImpl::encode(const FrameGroup& group) {
  check_group(group, "ppn_encode");
  if (group.blurry.size(2) % kStride != 0 || group.blurry.size(3) % kStride != 0) {
    throw DimensionError("ppn_encode: frame size " + shape_string(group.blurry) + " not divisible by " +
                         std::to_string(kStride));
  }
  Tensor x = torch::cat({group.blurry, group.companion}, 1);
  x = torch::relu(enc_in(x));
  x = torch::relu(enc_down1(x));
  x = torch::relu(enc_down2(x));
  return {x};
}

std::array<FeatureGrid, 3> PpnImpl::fuse(const std::array<FeatureGrid, 3>& features, bool use_nlb) {
  const auto& ref = features[0].features;
  for (const auto& f : features) {
    if (f.features.sizes() != ref.sizes()) {
      throw DimensionError("non_local_fuse: feature shapes differ: " + shape_string(ref) + " vs " +
                           shape_string(f.features));
    }
  }
  if (!use_nlb) return features;
  const int64_t c = ref.size(1);
  Tensor total = torch::cat({features[0].features, features[1].features, features[2].features}, 1);
  if (total.size(1) != 3 * config_.width) {
    throw DimensionError("non_local_fuse: expected " + std::to_string(config_.width) + " channels per grid, got " +
                         std::to_string(c));
  }
  for (const auto& block : *nonlocal) total = block->as<NonLocalBlock>()->forward(total);
  auto parts = total.split(c, 1);
  return {FeatureGrid{parts[0]}, FeatureGrid{parts[1]}, FeatureGrid{parts[2]}};
}

Tensor PpnImpl::decode(const FeatureGrid& fused, const FrameGroup& group) {
  check_group(group, "ppn_decode");
  const Tensor& f = fused.features;
  if (f.dim() != 4 || f.size(1) != config_.width || f.size(0) != group.blurry.size(0) ||
      f.size(2) * kStride != group.blurry.size(2) || f.size(3) * kStride != group.blurry.size(3)) {
    throw DimensionError("ppn_decode: features " + shape_string(f) + " do not match group " +
                         shape_string(group.blurry));
  }
  Tensor x = torch::relu(dec_up1(upsample2(f)));
  x = torch::relu(dec_up2(upsample2(x)));
  const Tensor shallow = torch::relu(dec_shallow(torch::cat({group.blurry, group.companion}, 1)));
  x = torch::relu(dec_merge(torch::cat({x, shallow}, 1)));
  return (group.blurry + dec_out(x)).clamp(0.0, 1.0);
}

PpnOutput PpnImpl::forward(const std::array<FrameGroup, 3>& groups, bool use_nlb) {
  for (const auto& g : groups) {
    check_group(g, "ppn_forward");
    require_same_grid(g.blurry, groups[0].blurry, "ppn_forward");
  }
  // The three groups share weights, so encode and decode them as one batch.
  const int64_t n = groups[0].blurry.size(0);
  const FrameGroup stacked{torch::cat({groups[0].blurry, groups[1].blurry, groups[2].blurry}, 0),
                           torch::cat({groups[0].companion, groups[1].companion, groups[2].companion}, 0)};
  const Tensor encoded = encode(stacked).features;
  const auto parts = encoded.split(n, 0);
  const auto fused = fuse({FeatureGrid{parts[0]}, FeatureGrid{parts[1]}, FeatureGrid{parts[2]}}, use_nlb);
  const Tensor decoded =
      decode(FeatureGrid{torch::cat({fused[0].features, fused[1].features, fused[2].features}, 0)}, stacked);
  const auto outs = decoded.split(n, 0);
  return {outs[0], outs[1], outs[2]};
}

}  // namespace dan
