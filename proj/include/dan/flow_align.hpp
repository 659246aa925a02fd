#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dan/common.hpp"

namespace dan {

/// Dense optical flow between two frames. `estimate(src, dst)` returns a
/// field such that src(x) ~ dst(x + flow(x)), i.e. warp_backward(dst, flow)
/// aligns dst onto src. Instances are used from one thread at a time.
class FlowBackend {
 public:
  virtual ~FlowBackend() = default;
  virtual FlowField estimate(const Tensor& src, const Tensor& dst) = 0;
  virtual std::string name() const = 0;
};

struct PyramidFlowOptions {
  int levels = 3;
  int warps = 2;
  int iterations = 25;
  double smoothness = 0.02;  // squared Horn-Schunck regulariser
  int search_radius = 2;     // integer block search at the coarsest level
  int patch_radius = 2;
};

/// Coarse-to-fine Horn-Schunck estimator with an integer block-matching
/// initialisation at the coarsest level. No learned components.
class PyramidFlowBackend final : public FlowBackend {
 public:
  explicit PyramidFlowBackend(PyramidFlowOptions options = {}) : options_(options) {}
  FlowField estimate(const Tensor& src, const Tensor& dst) override;
  std::string name() const override { return "builtin-pyramid"; }

 private:
  PyramidFlowOptions options_;
};

/// Records every field produced by the wrapped backend.
class RecordingFlowBackend final : public FlowBackend {
 public:
  explicit RecordingFlowBackend(FlowBackend& inner) : inner_(inner) {}
  FlowField estimate(const Tensor& src, const Tensor& dst) override;
  std::string name() const override { return "recording:" + inner_.name(); }
  const std::vector<FlowField>& recorded() const { return recorded_; }

 private:
  FlowBackend& inner_;
  std::vector<FlowField> recorded_;
};

/// Returns previously recorded fields in call order, ignoring the frames.
/// Holding flows fixed makes the pipeline a smooth function of the network
/// parameters, which finite-difference checks rely on.
class ReplayFlowBackend final : public FlowBackend {
 public:
  explicit ReplayFlowBackend(std::vector<FlowField> flows) : flows_(std::move(flows)) {}
  FlowField estimate(const Tensor& src, const Tensor& dst) override;
  std::string name() const override { return "replay"; }
  void rewind() { cursor_ = 0; }

 private:
  std::vector<FlowField> flows_;
  size_t cursor_ = 0;
};

using FlowBackendFactory = std::function<std::unique_ptr<FlowBackend>()>;

/// Name -> factory registry; "builtin-pyramid" is always present.
void register_flow_backend(const std::string& name, FlowBackendFactory factory);
std::unique_ptr<FlowBackend> make_flow_backend(std::string_view name);
std::vector<std::string> flow_backend_names();

FlowField estimate_flow(const Tensor& src, const Tensor& dst, FlowBackend& backend);

/// output(x) = bilinear sample of src at x + flow(x), sample coordinates
/// clamped to the image border. Differentiable with respect to `src`.
Tensor warp_backward(const Tensor& src, const FlowField& flow);

struct OcclusionParams {
  double alpha1 = 0.01;
  double alpha2 = 0.5;
};

/// Forward-backward consistency check: a pixel is visible (1) iff
/// |wf(x) + wb(x + wf(x))| < alpha1 (|wf(x)|^2 + |wb(x + wf(x))|^2) + alpha2,
/// with wb bilinearly resampled at x + wf(x). Evaluated in double precision.
OcclusionMap detect_occlusion(const FlowField& forward, const FlowField& backward,
                              const OcclusionParams& params = {});

OcclusionMap all_visible(const Tensor& like);

/// central * (1 - occ) + warped * occ.
Tensor revise_warped(const Tensor& central, const Tensor& warped, const OcclusionMap& occ);

struct AlignedTriplet {
  Tensor revised_forward;   // previous frame aligned to the centre, occlusions filled
  Tensor revised_backward;  // next frame aligned to the centre, occlusions filled
  Tensor warped_prev;
  Tensor warped_next;
  OcclusionMap occ_prev;
  OcclusionMap occ_next;
  FlowField center_to_prev;
  FlowField prev_to_center;
  FlowField center_to_next;
  FlowField next_to_center;
};

/// Estimates flows against both neighbours (on detached frames), warps the
/// neighbours onto the centre and fills their occluded pixels from it. With
/// `use_occlusion` off the occlusion maps are all ones.
AlignedTriplet align_triplet(const Tensor& prev, const Tensor& center, const Tensor& next,
                             FlowBackend& backend, const OcclusionParams& params = {},
                             bool use_occlusion = true);

/// Flow file: 8-byte header (H, W as little-endian uint32) followed by the
/// dx plane and the dy plane as little-endian float32, row-major.
void write_flow_file(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow_file(const std::filesystem::path& path,
                         FlowDirection direction = FlowDirection::kForward);

/// On-disk flow store keyed by (video_id, frame_index, direction).
class FlowCache {
 public:
  explicit FlowCache(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path key_path(const std::string& video_id, int64_t frame_index,
                                 FlowDirection direction) const;
  void store(const std::string& video_id, int64_t frame_index, const FlowField& flow) const;
  std::optional<FlowField> load(const std::string& video_id, int64_t frame_index,
                                FlowDirection direction) const;

 private:
  std::filesystem::path root_;
};

}  // namespace dan
