#include "dan/fan.hpp"

namespace dan {
namespace {

torch::nn::Conv2d conv3(int64_t in, int64_t out, int64_t dilation = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(dilation).dilation(dilation));
}

void check_input(const AggregationInput& in) {
  require_image(in.deblurred_center, 3, "fan(deblurred_center)");
  require_image(in.warped_prev_output, 3, "fan(warped_prev_output)");
  require_image(in.warped_next_deblurred, 3, "fan(warped_next_deblurred)");
  require_same_grid(in.deblurred_center, in.warped_prev_output, "fan");
  require_same_grid(in.deblurred_center, in.warped_next_deblurred, "fan");
}

FlowField zero_flow(const Tensor& like, FlowDirection direction) {
  return {torch::zeros({like.size(0), 2, like.size(2), like.size(3)}, torch::kFloat32), direction};
}

}  // namespace

FanImpl::FanImpl(FanConfig config) : config_(config) {
  if (config_.width < 1 || config_.flow_width < 1) throw ArgumentError("fan: widths must be positive");
  const int64_t w = config_.width;
  const int64_t fw = config_.flow_width;
  flow_a = register_module("flow_a", conv3(4, fw));
  flow_b = register_module("flow_b", conv3(fw, fw));
  body_a = register_module("body_a", conv3(9 + 2 + fw, w));
  body_b = register_module("body_b", conv3(w, w, 2));
  body_c = register_module("body_c", conv3(w, w));
  logits = register_module("logits", conv3(w, 3));
  reset_logits(0.0);
}

void FanImpl::reset_logits(double center_bias) {
  torch::NoGradGuard no_grad;
  logits->weight.zero_();
  logits->bias.zero_();
  logits->bias[1].fill_(center_bias);
}

ReliabilityTriplet FanImpl::reliability(const AggregationInput& input) {
  check_input(input);
  require_image(input.occ_prev.mask, 1, "fan_reliability(occ_prev)");
  require_image(input.occ_next.mask, 1, "fan_reliability(occ_next)");
  require_image(input.flow_prev.vectors, 2, "fan_reliability(flow_prev)");
  require_image(input.flow_next.vectors, 2, "fan_reliability(flow_next)");
  const Tensor& center = input.deblurred_center;
  require_same_grid(center, input.occ_prev.mask, "fan_reliability");
  require_same_grid(center, input.occ_next.mask, "fan_reliability");
  require_same_grid(center, input.flow_prev.vectors, "fan_reliability");
  require_same_grid(center, input.flow_next.vectors, "fan_reliability");

  const auto dtype = center.scalar_type();
  const Tensor flows =
      torch::cat({input.flow_prev.vectors, input.flow_next.vectors}, 1).detach().to(dtype) * config_.flow_scale;
  const Tensor flow_features = torch::relu(flow_b(torch::relu(flow_a(flows))));
  const Tensor occ = torch::cat({input.occ_prev.mask, input.occ_next.mask}, 1).to(dtype);
  Tensor x = torch::cat({input.warped_prev_output, center, input.warped_next_deblurred, occ, flow_features}, 1);
  x = torch::relu(body_a(x));
  x = torch::relu(body_b(x));
  x = torch::relu(body_c(x));
  const Tensor weights = torch::softmax(logits(x), 1);
  auto maps = weights.split(1, 1);
  return {maps[0], maps[1], maps[2]};
}

Tensor FanImpl::forward(const AggregationInput& input, ReliabilityTriplet* maps) {
  ReliabilityTriplet rms = reliability(input);
  Tensor out = fan_aggregate(input, rms);
  if (maps) *maps = std::move(rms);
  return out;
}

Tensor fan_aggregate(const AggregationInput& input, const ReliabilityTriplet& maps) {
  check_input(input);
  for (const Tensor* m : {&maps.prev, &maps.center, &maps.next}) {
    require_image(*m, 1, "fan_aggregate(reliability)");
    require_same_grid(input.deblurred_center, *m, "fan_aggregate");
  }
  {
    torch::NoGradGuard no_grad;
    const Tensor sum = maps.prev + maps.center + maps.next;
    const bool nonneg = (maps.prev.ge(0) & maps.center.ge(0) & maps.next.ge(0)).all().item<bool>();
    if (!nonneg || (sum - 1).abs().max().item<double>() > 1e-5) {
      throw ArgumentError("fan_aggregate: reliability maps are not a per-pixel partition of unity");
    }
  }
  return input.warped_prev_output * maps.prev + input.deblurred_center * maps.center +
         input.warped_next_deblurred * maps.next;
}

AggregationInput build_fan_input(const std::optional<Tensor>& prev_aggregated, const Tensor& center_deblurred,
                                 const std::optional<Tensor>& next_deblurred, FlowBackend& backend,
                                 const OcclusionParams& params, bool use_occlusion) {
  require_image(center_deblurred, 3, "build_fan_input");
  AggregationInput in;
  in.deblurred_center = center_deblurred;

  auto align = [&](const Tensor& neighbour, Tensor& warped, OcclusionMap& occ, FlowField& flow,
                   FlowDirection direction) {
    require_same_grid(center_deblurred, neighbour, "build_fan_input");
    flow = estimate_flow(center_deblurred, neighbour, backend);
    flow.direction = direction;
    warped = warp_backward(neighbour, flow);
    if (use_occlusion) {
      FlowField reverse = estimate_flow(neighbour, center_deblurred, backend);
      occ = detect_occlusion(flow, reverse, params);
    } else {
      occ = all_visible(center_deblurred);
    }
  };

  if (prev_aggregated) {
    align(*prev_aggregated, in.warped_prev_output, in.occ_prev, in.flow_prev, FlowDirection::kBackward);
  } else {
    in.warped_prev_output = center_deblurred;
    in.occ_prev = all_visible(center_deblurred);
    in.flow_prev = zero_flow(center_deblurred, FlowDirection::kBackward);
  }
  if (next_deblurred) {
    align(*next_deblurred, in.warped_next_deblurred, in.occ_next, in.flow_next, FlowDirection::kForward);
  } else {
    in.warped_next_deblurred = center_deblurred;
    in.occ_next = all_visible(center_deblurred);
    in.flow_next = zero_flow(center_deblurred, FlowDirection::kForward);
  }
  return in;
}

}  // namespace dan
