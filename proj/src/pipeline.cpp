#include "dan/pipeline.hpp"

namespace dan {

DanModelImpl::DanModelImpl(DanConfig config) : config_(config) {
  ppn = register_module("ppn", Ppn(config_.ppn));
  abdn = register_module("abdn", Abdn(config_.abdn));
  fan = register_module("fan", Fan(config_.fan));
}

DanModel make_model(const DanConfig& config, uint64_t seed, InitMode mode) {
  torch::manual_seed(seed);
  DanModel model(config);
  torch::NoGradGuard no_grad;
  auto zero = [](torch::nn::Conv2d& conv) {
    conv->weight.zero_();
    conv->bias.zero_();
  };
  switch (mode) {
    case InitMode::kDefault:
    case InitMode::kIdentity:
      zero(model->ppn->dec_out);
      zero(model->abdn->out);
      for (const auto& block : *model->ppn->nonlocal) zero(block->as<NonLocalBlock>()->out);
      model->fan->reset_logits(mode == InitMode::kIdentity ? kIdentityCenterBias : 0.0);
      break;
    case InitMode::kRandom: {
      auto shrink = [](torch::nn::Conv2d& conv, double scale) {
        conv->weight.mul_(scale);
        conv->bias.mul_(scale);
      };
      shrink(model->ppn->dec_out, 0.1);
      shrink(model->abdn->out, 0.1);
      auto& logits = model->fan->logits;
      logits->weight.uniform_(-0.05, 0.05);
      logits->bias.uniform_(-0.5, 0.5);
      for (const auto& block : *model->ppn->nonlocal) {
        auto& out = block->as<NonLocalBlock>()->out;
        out->weight.uniform_(-0.2, 0.2);
        out->bias.uniform_(-0.05, 0.05);
      }
      break;
    }
  }
  return model;
}

void RecurrentState::detach() {
  for (auto* slot : {&prev_preprocessed, &prev_deblurred, &prev_aggregated}) {
    if (*slot) *slot = (*slot)->detach();
  }
}

std::array<Tensor, 3> window_at(const std::vector<Tensor>& frames, int64_t center) {
  const int64_t n = static_cast<int64_t>(frames.size());
  if (center < 0 || center >= n) throw ArgumentError("window_at: centre index out of range");
  return {frames[std::max<int64_t>(center - 1, 0)], frames[center], frames[std::min(center + 1, n - 1)]};
}

DanPipeline::DanPipeline(DanModel model, FlowBackend& backend, StageOptions options)
    : model_(std::move(model)), backend_(backend), options_(options) {}

Tensor DanPipeline::aggregate(const RecurrentState& state, const std::optional<Tensor>& next_deblurred,
                              StepRecord& record) {
  const Tensor& center = *state.prev_deblurred;
  if (options_.bypass_fan) return center;
  AggregationInput input = build_fan_input(state.prev_aggregated, center, next_deblurred, backend_,
                                           model_->config().occlusion, options_.fan_occlusion);
  ReliabilityTriplet maps;
  Tensor out = model_->fan->forward(input, &maps);
  record.fan_input = std::move(input);
  record.reliability = std::move(maps);
  return out;
}

StepResult DanPipeline::step(const std::array<Tensor, 3>& window, const RecurrentState& state) {
  for (const auto& f : window) {
    require_image(f, 3, "step(window)");
    require_same_grid(f, window[1], "step(window)");
  }
  for (const auto* slot : {&state.prev_preprocessed, &state.prev_deblurred, &state.prev_aggregated}) {
    if (*slot && ((*slot)->dim() != 4 || (*slot)->sizes() != window[1].sizes())) {
      throw StateError("step: recurrent state frame " + shape_string(**slot) + " does not match window " +
                       shape_string(window[1]));
    }
  }
  if (state.prev_aggregated && !state.prev_deblurred) throw StateError("step: aggregate carried without deblurred frame");

  const int64_t k = state.steps;
  StepResult result;
  StepRecord& rec = result.record;
  rec.center_index = k;
  rec.slot_indices = {std::max<int64_t>(k - 1, 0), k, k + 1};

  if (options_.bypass_ppn) {
    rec.preprocessed = {window[0], window[1], window[2]};
  } else {
    const std::array<FrameGroup, 3> groups = {
        FrameGroup{window[0], state.prev_deblurred.value_or(window[0])},
        FrameGroup{window[1], state.prev_preprocessed.value_or(window[1])},
        FrameGroup{window[2], window[2]},
    };
    PpnOutput p = model_->ppn->forward(groups, options_.use_nlb);
    rec.preprocessed = {p.p_prev, p.p_center, p.p_next};
  }

  if (options_.bypass_abdn) {
    rec.deblurred = rec.preprocessed[1];
  } else {
    AbdnInput input = build_abdn_input(rec.preprocessed[0], rec.preprocessed[1], rec.preprocessed[2], backend_,
                                       model_->config().occlusion, options_.abdn_occlusion);
    rec.deblurred = model_->abdn->forward(input.stack);
    rec.abdn_input = std::move(input);
  }

  RecurrentState next;
  next.prev_preprocessed = rec.preprocessed[2];
  next.prev_deblurred = rec.deblurred;
  next.steps = k + 1;
  if (state.prev_deblurred) {
    rec.aggregated = aggregate(state, rec.deblurred, rec);
    rec.aggregated_index = k - 1;
    next.prev_aggregated = rec.aggregated;
  }
  result.aggregated = rec.aggregated;
  result.state = std::move(next);
  return result;
}

StepResult DanPipeline::finish(const RecurrentState& state) {
  if (!state.prev_deblurred) throw StateError("finish: no deblurred frame pending");
  StepResult result;
  StepRecord& rec = result.record;
  rec.center_index = state.steps;
  rec.aggregated = aggregate(state, std::nullopt, rec);
  rec.aggregated_index = state.steps - 1;
  result.aggregated = rec.aggregated;
  result.state.steps = state.steps;
  return result;
}

PipelineOutput run_video(const std::vector<Tensor>& blurry, DanModel model, FlowBackend& backend,
                         const RunOptions& options) {
  if (blurry.size() < 3) throw ArgumentError("run_video: need at least 3 frames, got " + std::to_string(blurry.size()));
  DanPipeline pipeline(std::move(model), backend, options.stages);
  PipelineOutput out;
  RecurrentState state;
  auto emit = [&](StepResult& r) {
    if (r.aggregated) {
      if (options.on_frame) options.on_frame(r.record.aggregated_index, *r.aggregated);
      out.aggregated.push_back(*r.aggregated);
    }
    if (options.keep_records) out.records.push_back(r.record);
  };
  const int64_t n = static_cast<int64_t>(blurry.size());
  for (int64_t k = 0; k < n; ++k) {
    StepResult r = pipeline.step(window_at(blurry, k), state);
    out.deblurred.push_back(r.record.deblurred);
    out.preprocessed_center.push_back(r.record.preprocessed[1]);
    emit(r);
    state = std::move(r.state);
  }
  StepResult last = pipeline.finish(state);
  emit(last);
  return out;
}

}  // namespace dan
