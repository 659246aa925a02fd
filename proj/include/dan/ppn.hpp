#pragma once

#include <array>

#include "dan/common.hpp"

namespace dan {

struct PpnConfig {
  int64_t width = 32;      // encoder/decoder channels per frame group
  int nlb_blocks = 3;      // chained non-local blocks
  int64_t subsample_above = 64 * 64;  // key/value 2x pooling beyond this many positions
};

/// A blurry frame with its restored companion (D, P, or the blurry frame
/// itself when nothing has been restored yet).
struct FrameGroup {
  Tensor blurry;
  Tensor companion;
};

struct FeatureGrid {
  Tensor features;  // [N, C, H / 4, W / 4]
};

struct PpnOutput {
  Tensor p_prev;
  Tensor p_center;
  Tensor p_next;
};

/// Embedded-Gaussian non-local block with a residual connection:
/// z = W_z * (softmax(theta(x)^T phi(x)) g(x)) + x.
class NonLocalBlockImpl : public torch::nn::Module {
 public:
  NonLocalBlockImpl(int64_t channels, int64_t subsample_above);

  Tensor forward(const Tensor& x);
  /// Row-stochastic affinity matrix [N, HW, HW'] for `x`.
  Tensor attention(const Tensor& x);

  int64_t channels() const { return channels_; }
  int64_t inter_channels() const { return inter_; }
  bool subsamples(const Tensor& x) const { return x.size(2) * x.size(3) > subsample_above_; }

  torch::nn::Conv2d theta{nullptr}, phi{nullptr}, g{nullptr}, out{nullptr};

 private:
  Tensor keys(const Tensor& x, torch::nn::Conv2d& proj);

  int64_t channels_;
  int64_t inter_;
  int64_t subsample_above_;
};
TORCH_MODULE(NonLocalBlock);

/// Preprocessing network: shared encoder over the three frame groups,
/// non-local fusion of the concatenated features, shared decoder with a
/// global residual from each blurry input.
class PpnImpl : public torch::nn::Module {
 public:
  explicit PpnImpl(PpnConfig config = {});

  FeatureGrid encode(const FrameGroup& group);
  std::array<FeatureGrid, 3> fuse(const std::array<FeatureGrid, 3>& features, bool use_nlb = true);
  Tensor decode(const FeatureGrid& fused, const FrameGroup& group);
  PpnOutput forward(const std::array<FrameGroup, 3>& groups, bool use_nlb = true);

  const PpnConfig& config() const { return config_; }
  static constexpr int64_t kStride = 4;

  torch::nn::Conv2d enc_in{nullptr}, enc_down1{nullptr}, enc_down2{nullptr};
  torch::nn::ModuleList nonlocal;
  torch::nn::Conv2d dec_up1{nullptr}, dec_up2{nullptr}, dec_shallow{nullptr}, dec_merge{nullptr}, dec_out{nullptr};

 private:
  PpnConfig config_;
};
TORCH_MODULE(Ppn);

}  // namespace dan
