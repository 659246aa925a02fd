#include "dan/flow_align.hpp"

#include <map>
#include <mutex>

namespace dan {
namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, FlowBackendFactory, std::less<>> factories;

  Registry() {
    factories["builtin-pyramid"] = [] { return std::make_unique<PyramidFlowBackend>(); };
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_flow_backend(const std::string& name, FlowBackendFactory factory) {
  if (name.empty() || !factory) throw ArgumentError("register_flow_backend: empty name or factory");
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

std::unique_ptr<FlowBackend> make_flow_backend(std::string_view name) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  auto it = r.factories.find(name);
  if (it == r.factories.end()) throw BackendError("unknown flow backend '" + std::string(name) + "'");
  return it->second();
}

std::vector<std::string> flow_backend_names() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, factory] : r.factories) names.push_back(name);
  return names;
}

FlowField RecordingFlowBackend::estimate(const Tensor& src, const Tensor& dst) {
  FlowField f = inner_.estimate(src, dst);
  recorded_.push_back(f);
  return f;
}

FlowField ReplayFlowBackend::estimate(const Tensor& src, const Tensor&) {
  if (cursor_ >= flows_.size()) throw BackendError("replay backend exhausted after " + std::to_string(cursor_) + " fields");
  FlowField f = flows_[cursor_++];
  if (f.vectors.size(0) != src.size(0) || f.height() != src.size(2) || f.width() != src.size(3)) {
    throw BackendError("replay backend: recorded field " + shape_string(f.vectors) +
                       " does not match frame " + shape_string(src));
  }
  return f;
}

FlowField estimate_flow(const Tensor& src, const Tensor& dst, FlowBackend& backend) {
  require_image(src, -1, "estimate_flow");
  require_image(dst, -1, "estimate_flow");
  require_same_grid(src, dst, "estimate_flow");
  if (src.size(1) != dst.size(1)) throw DimensionError("estimate_flow: channel count mismatch");
  FlowField flow;
  try {
    flow = backend.estimate(src.detach(), dst.detach());
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendError("flow backend '" + backend.name() + "' failed: " + e.what());
  }
  if (!flow.vectors.defined() || flow.vectors.dim() != 4 || flow.vectors.size(1) != 2 ||
      flow.vectors.size(0) != src.size(0) || flow.height() != src.size(2) || flow.width() != src.size(3)) {
    throw BackendError("flow backend '" + backend.name() + "' returned field of shape " +
                       (flow.vectors.defined() ? shape_string(flow.vectors) : std::string("<undefined>")));
  }
  if (!torch::isfinite(flow.vectors).all().item<bool>()) {
    throw BackendError("flow backend '" + backend.name() + "' returned non-finite vectors");
  }
  return flow;
}

Tensor warp_backward(const Tensor& src, const FlowField& flow) {
  require_image(src, -1, "warp_backward");
  require_image(flow.vectors, 2, "warp_backward(flow)");
  require_same_grid(src, flow.vectors, "warp_backward");
  const int64_t n = src.size(0);
  const int64_t c = src.size(1);
  const int64_t h = src.size(2);
  const int64_t w = src.size(3);

  // Sample positions are computed in double; only the weights take the
  // source dtype. Flow never carries gradient.
  const auto f = flow.vectors.detach().to(torch::kFloat64);
  const auto grid_x = torch::arange(w, torch::kFloat64).view({1, 1, w});
  const auto grid_y = torch::arange(h, torch::kFloat64).view({1, h, 1});
  const auto sx = (grid_x + f.select(1, 0)).clamp(0.0, static_cast<double>(w - 1));
  const auto sy = (grid_y + f.select(1, 1)).clamp(0.0, static_cast<double>(h - 1));
  const auto fx = sx.floor();
  const auto fy = sy.floor();
  const auto wx = (sx - fx).to(src.scalar_type()).unsqueeze(1);
  const auto wy = (sy - fy).to(src.scalar_type()).unsqueeze(1);
  const auto x0 = fx.to(torch::kLong);
  const auto y0 = fy.to(torch::kLong);
  const auto x1 = (x0 + 1).clamp_max(w - 1);
  const auto y1 = (y0 + 1).clamp_max(h - 1);

  const auto flat = src.reshape({n, c, h * w});
  auto sample = [&](const Tensor& yi, const Tensor& xi) {
    auto index = (yi * w + xi).view({n, 1, h * w}).expand({n, c, h * w});
    return flat.gather(2, index).view({n, c, h, w});
  };
  const auto top = (1 - wx) * sample(y0, x0) + wx * sample(y0, x1);
  const auto bottom = (1 - wx) * sample(y1, x0) + wx * sample(y1, x1);
  return (1 - wy) * top + wy * bottom;
}

OcclusionMap detect_occlusion(const FlowField& forward, const FlowField& backward,
                              const OcclusionParams& params) {
  require_image(forward.vectors, 2, "detect_occlusion(forward)");
  require_image(backward.vectors, 2, "detect_occlusion(backward)");
  require_same_grid(forward.vectors, backward.vectors, "detect_occlusion");
  if (params.alpha1 < 0.0 || params.alpha2 < 0.0) throw ArgumentError("detect_occlusion: alphas must be >= 0");

  const auto wf = forward.vectors.detach().to(torch::kFloat64);
  const auto wb = warp_backward(backward.vectors.detach().to(torch::kFloat64), forward);
  const auto lhs = (wf + wb).square().sum(1, true).sqrt();
  const auto rhs = params.alpha1 * (wf.square().sum(1, true) + wb.square().sum(1, true)) + params.alpha2;
  return {lhs.lt(rhs).to(forward.vectors.scalar_type())};
}

OcclusionMap all_visible(const Tensor& like) {
  return {torch::ones({like.size(0), 1, like.size(2), like.size(3)}, like.options().requires_grad(false))};
}

Tensor revise_warped(const Tensor& central, const Tensor& warped, const OcclusionMap& occ) {
  require_image(central, -1, "revise_warped(central)");
  require_image(warped, central.size(1), "revise_warped(warped)");
  require_image(occ.mask, 1, "revise_warped(occ)");
  require_same_grid(central, warped, "revise_warped");
  require_same_grid(central, occ.mask, "revise_warped");
  const auto& m = occ.mask;
  if (!(m.eq(0) | m.eq(1)).all().item<bool>()) throw ArgumentError("revise_warped: occlusion map is not binary");
  const auto mask = m.to(central.scalar_type());
  return central * (1 - mask) + warped * mask;
}

AlignedTriplet align_triplet(const Tensor& prev, const Tensor& center, const Tensor& next,
                             FlowBackend& backend, const OcclusionParams& params, bool use_occlusion) {
  require_image(center, -1, "align_triplet(center)");
  require_same_grid(prev, center, "align_triplet");
  require_same_grid(next, center, "align_triplet");

  AlignedTriplet out;
  out.center_to_prev = estimate_flow(center, prev, backend);
  out.prev_to_center = estimate_flow(prev, center, backend);
  out.center_to_next = estimate_flow(center, next, backend);
  out.next_to_center = estimate_flow(next, center, backend);
  out.center_to_prev.direction = FlowDirection::kBackward;
  out.prev_to_center.direction = FlowDirection::kForward;
  out.center_to_next.direction = FlowDirection::kForward;
  out.next_to_center.direction = FlowDirection::kBackward;

  out.warped_prev = warp_backward(prev, out.center_to_prev);
  out.warped_next = warp_backward(next, out.center_to_next);
  if (use_occlusion) {
    out.occ_prev = detect_occlusion(out.center_to_prev, out.prev_to_center, params);
    out.occ_next = detect_occlusion(out.center_to_next, out.next_to_center, params);
  } else {
    out.occ_prev = all_visible(center);
    out.occ_next = all_visible(center);
  }
  out.revised_forward = revise_warped(center, out.warped_prev, out.occ_prev);
  out.revised_backward = revise_warped(center, out.warped_next, out.occ_next);
  return out;
}

}  // namespace dan
